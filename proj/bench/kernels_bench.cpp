// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS set to taste.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>

#include "sva/grammar.hpp"
#include "sva/kernels.hpp"
#include "sva/training.hpp"

namespace {

using namespace sva;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (real& v : m.span()) v = n(rng);
  return m;
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix c(n, n);
  for (auto _ : state) {
    Kernel(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}

// Probe-by-hidden representation matrix, as fed to the similarity analysis.
template <void (*Kernel)(const Matrix&, Matrix&)>
void BM_gram(benchmark::State& state) {
  const auto p = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(p, 256, 3);
  Matrix c(p, p);
  for (auto _ : state) {
    Kernel(x, c);
    benchmark::DoNotOptimize(c.data());
  }
}

template <std::size_t (*Kernel)(Matrix&)>
void BM_standardize(benchmark::State& state) {
  const auto p = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(p, p, 4);
  for (auto _ : state) {
    Matrix m = x;
    benchmark::DoNotOptimize(Kernel(m));
  }
}

// One training epoch; per-example gradients run across `threads` threads.
void BM_train_epoch(benchmark::State& state) {
  const int threads = state.range(0) == 0 ? omp_get_max_threads() : static_cast<int>(state.range(0));
  const Lexicon lex = Lexicon::builtin();
  const Corpus corpus = generate_training_corpus(lex, kNaturalProfile, 256, 5);
  const Vocabulary vocab = Vocabulary::build(corpus);
  const auto data = encode_corpus(corpus, vocab);
  TrainConfig cfg;
  cfg.hidden = 64;
  cfg.embed = 32;
  cfg.batch = 32;
  cfg.epochs = 1;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(threads);
  for (auto _ : state) {
    state.PauseTiming();
    StackedModel m = init_for(CellKind::LSTM, cfg, vocab.size());
    state.ResumeTiming();
    benchmark::DoNotOptimize(train(m, data, cfg));
  }
  omp_set_num_threads(saved);
  state.counters["threads"] = threads;
}

}  // namespace

BENCHMARK(BM_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(128)->Arg(256);
BENCHMARK(BM_matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->Arg(128)->Arg(256);
BENCHMARK(BM_gram<kernels::serial::gram>)->Name("gram/serial")->Arg(200)->Arg(500);
BENCHMARK(BM_gram<kernels::parallel::gram>)->Name("gram/parallel")->Arg(200)->Arg(500);
BENCHMARK(BM_standardize<kernels::serial::standardize_rows>)->Name("standardize/serial")->Arg(500);
BENCHMARK(BM_standardize<kernels::parallel::standardize_rows>)->Name("standardize/parallel")->Arg(500);
// Arg 0 means all available threads.
BENCHMARK(BM_train_epoch)->Name("train_epoch")->Arg(1)->Arg(0)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
