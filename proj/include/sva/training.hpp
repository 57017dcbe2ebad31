#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sva/cells.hpp"
#include "sva/corpus.hpp"
#include "sva/grammar.hpp"

namespace sva {

struct TrainConfig {
  Head objective = Head::LanguageModel;
  std::size_t layers = 1;
  std::size_t hidden = 64;
  std::size_t embed = 32;
  real dropout = 0.2;
  std::size_t batch = 16;
  real lr = 1e-3;
  std::size_t epochs = 10;
  std::optional<real> clip_norm = 5.0;  // nullopt: no clipping
  std::uint64_t seed = 1;
  bool augmentation = true;  // classifier only

  // Small models for one-core runs.
  static TrainConfig desk(Head objective, CellKind kind);
  // Full-size settings; kept for reference runs.
  static TrainConfig paper(Head objective, CellKind kind);

  void validate() const;  // throws ConfigError
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// One encoded training or test instance.
struct Example {
  std::vector<std::size_t> ids;
  int label = 1;  // classifier: 1 grammatical, 0 ungrammatical
};

std::vector<Example> encode_corpus(const Corpus& corpus, const Vocabulary& vocab);

StackedModel init_for(CellKind kind, const TrainConfig& cfg, std::size_t vocab_size);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  real loss = 0;       // mean per predicted token (LM) or per sentence (classifier)
  real grad_norm = 0;  // before clipping
};

struct TrainResult {
  std::vector<LossRecord> trace;
  std::vector<real> epoch_loss;
};

// Minibatch Adam. Per-example gradients are computed concurrently and summed
// in example order, so results do not depend on the thread count.
TrainResult train(StackedModel& model, const std::vector<Example>& data, const TrainConfig& cfg);

std::string loss_trace_csv(const TrainResult& result);

// ------------------------------------------------------------ evaluation

// Attractor counts of 3 or more share the last bucket.
inline constexpr std::size_t kAttractorBuckets = 4;

struct Bucket {
  std::size_t correct = 0;
  std::size_t n = 0;
  double accuracy() const { return n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(n); }
  friend bool operator==(const Bucket&, const Bucket&) = default;
};

struct EvalReport {
  std::array<Bucket, kAttractorBuckets> buckets{};
  std::size_t excluded = 0;

  std::size_t evaluated() const;
  double overall() const;
  void add(std::size_t attractors, bool correct);
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// A verb-number minimal pair after a shared prefix.
struct AgreementProbe {
  std::vector<std::size_t> prefix;
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t attractors = 0;
};

// nullopt when either verb form is outside the lexicon or vocabulary.
std::optional<AgreementProbe> make_probe(const AnnotatedSentence& s, const Vocabulary& vocab,
                                         const InflectionLexicon& lex);
std::optional<AgreementProbe> make_probe(const TseItem& item, const Vocabulary& vocab);

// Correct iff the correct form's logit is strictly higher (ties are errors).
std::vector<bool> judge_probes(const StackedModel& model, const std::vector<AgreementProbe>& probes);

EvalReport eval_lm_agreement(const StackedModel& model, const Vocabulary& vocab, const Corpus& test,
                             const InflectionLexicon& lex);
// Predicts grammatical iff sigmoid(logit) >= 0.5.
EvalReport eval_classifier(const StackedModel& model, const Vocabulary& vocab, const Corpus& test);

// -ln p(tokens[position] | tokens[0..position)).
real surprisal(const StackedModel& model, const std::vector<std::size_t>& tokens, std::size_t position);

struct ConfidenceItem {
  real surprisal_correct = 0;
  real surprisal_incorrect = 0;
  real confidence = 0;  // surprisal_incorrect - surprisal_correct
  real ratio = 0;       // p(correct) / p(incorrect)
};

ConfidenceItem prediction_confidence(const StackedModel& model, const AgreementProbe& probe);

struct ConfidenceReport {
  std::vector<ConfidenceItem> items;
  std::size_t excluded = 0;
  real mean_confidence = 0;
  real mean_ratio = 0;
};

ConfidenceReport confidence_report(const StackedModel& model, const std::vector<AgreementProbe>& probes,
                                   std::size_t excluded = 0);

struct FineTuneResult {
  EvalReport before;  // on the attractor-free items
  EvalReport after;
  TrainResult trace;
};

// Continues LM training on `finetune` for `epochs` with fresh optimizer moments.
FineTuneResult fine_tune(StackedModel& model, const Vocabulary& vocab, const Corpus& finetune,
                         const Corpus& zero_attractor_test, const InflectionLexicon& lex, std::size_t epochs,
                         const TrainConfig& cfg);

// ------------------------------------------------------------ aggregation and CSV

struct BucketSummary {
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for a single seed
  std::size_t n = 0;
};
std::array<BucketSummary, kAttractorBuckets> summarize(const std::vector<EvalReport>& per_seed);

std::string eval_csv_header();
std::string eval_csv_rows(const std::string& architecture, const std::string& objective, const std::string& sampling,
                          std::uint64_t seed, const EvalReport& report);
std::string confidence_csv_header();
std::string confidence_csv_row(const std::string& architecture, const std::string& sampling,
                               const ConfidenceReport& report);

// Fixed-format number rendering shared by every CSV writer.
std::string fmt_real(double v, int digits = 6);

}  // namespace sva
