#include <doctest.h>

#include <cmath>
#include <random>

#include "sva/kernels.hpp"
#include "sva/numcore.hpp"
#include "test_util.hpp"

using namespace sva;
using sva::testing::random_matrix;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double s = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<long double>(a(i, k)) * b(k, j);
      c(i, j) = static_cast<real>(s);
    }
  return c;
}

}  // namespace

TEST_CASE("matmul matches a naive triple loop") {
  std::mt19937_64 rng(3);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {17, 9, 31}, {64, 33, 8}}) {
    const Matrix a = random_matrix(m, k, rng), b = random_matrix(k, n, rng);
    const Matrix c = matmul(a, b), ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul rejects mismatched shapes") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);
  Matrix out(1, 1);
  CHECK_THROWS_AS(kernels::serial::matmul(Matrix(2, 3), Matrix(3, 2), out), DimensionError);
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  std::mt19937_64 rng(11);
  const Matrix a = random_matrix(40, 23, rng), b = random_matrix(23, 37, rng);
  Matrix c1(40, 37), c2(40, 37);
  kernels::serial::matmul(a, b, c1);
  kernels::parallel::matmul(a, b, c2);
  CHECK(c1 == c2);

  Matrix g1(40, 40), g2(40, 40);
  kernels::serial::gram(a, g1);
  kernels::parallel::gram(a, g2);
  CHECK(g1 == g2);

  Matrix s1 = g1, s2 = g2;
  s1.row_span(3)[0] = 0;  // keep one row non-constant but make another constant
  for (real& v : s1.row_span(5)) v = 2;
  s2 = s1;
  CHECK(kernels::serial::standardize_rows(s1) == 1);
  CHECK(kernels::parallel::standardize_rows(s2) == 1);
  CHECK(s1 == s2);
}

TEST_CASE("gram is symmetric and equals x x^T") {
  std::mt19937_64 rng(5);
  const Matrix x = random_matrix(7, 4, rng);
  Matrix g(7, 7);
  kernels::serial::gram(x, g);
  const Matrix ref = naive_matmul(x, x.transposed());
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      CHECK(g(i, j) == g(j, i));
      CHECK(g(i, j) == doctest::Approx(ref(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("standardized rows have mean 0 and population std 1") {
  std::mt19937_64 rng(8);
  Matrix m = random_matrix(6, 9, rng, 50);
  CHECK(kernels::parallel::standardize_rows(m) == 0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double mean = 0, sq = 0;
    for (real v : m.row_span(r)) mean += v;
    mean /= 9;
    for (real v : m.row_span(r)) sq += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::sqrt(sq / 9) == doctest::Approx(1).epsilon(1e-12));
  }
}

TEST_CASE("for_each_index visits every index once") {
  std::vector<int> hits(1000, 0);
  kernels::parallel::for_each_index(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("softmax and log-sum-exp stay finite on large inputs") {
  Matrix x = Matrix::row({1000, 999, -1000});
  const Matrix p = rowwise_softmax(x);
  CHECK(p.all_finite());
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1).epsilon(1e-15));
  CHECK(log_sum_exp(x.span()) == doctest::Approx(1000 + std::log(1 + std::exp(-1.0))).epsilon(1e-15));
  CHECK(sigmoid(-800) >= 0);
  CHECK(sigmoid(800) == 1);
}

TEST_CASE("cross entropy is -ln softmax") {
  const Matrix z = Matrix::row({0.5, -1.0, 2.0, 0.0});
  const double lse = std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(2.0) + 1.0);
  CHECK(cross_entropy(z, 2) == doctest::Approx(lse - 2.0).epsilon(1e-14));
  CHECK_THROWS_AS(cross_entropy(z, 4), IndexError);
  CHECK_THROWS_AS(cross_entropy(Matrix(2, 2), 0), DimensionError);
}

TEST_CASE("cumax rows are nondecreasing, within (0, 1] and end at 1") {
  std::mt19937_64 rng(2);
  const Matrix x = random_matrix(200, 13, rng, 1000);
  const Matrix y = cumax(x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row_span(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      CHECK(row[j] > 0);
      CHECK(row[j] <= 1);
      if (j > 0) CHECK(row[j] >= row[j - 1]);
    }
    CHECK(std::abs(row.back() - 1) <= 1e-9);
  }
}

TEST_CASE("activations") {
  const Matrix x = Matrix::row({-2, 0, 3});
  CHECK(activation(Activation::Relu, x) == Matrix::row({0, 0, 3}));
  CHECK(activation(Activation::Tanh, x)[2] == doctest::Approx(std::tanh(3.0)));
  CHECK(activation(Activation::Sigmoid, x)[1] == 0.5);
}

TEST_CASE("adam: two steps match a hand-computed oracle") {
  // g = 0.5 then g = -1; lr 0.1, betas 0.9/0.999, eps 1e-8.
  Parameter p(Matrix::row({1.0}));
  AdamState s(1, 1, 0.1);
  p.grad[0] = 0.5;
  adam_step(p, s);
  // m = 0.05, v = 0.00025, mhat = 0.5, vhat = 0.25.
  const double x1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
  CHECK(p.value[0] == doctest::Approx(x1).epsilon(1e-15));

  p.grad[0] = -1.0;
  adam_step(p, s);
  const double m = 0.9 * 0.05 + 0.1 * -1.0;
  const double v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  const double x2 = x1 - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(p.value[0] == doctest::Approx(x2).epsilon(1e-14));
  CHECK(s.t == 2);
}

TEST_CASE("adam with lr 0 leaves the value untouched") {
  std::mt19937_64 rng(4);
  Parameter p(random_matrix(3, 3, rng));
  const Matrix before = p.value;
  p.grad = random_matrix(3, 3, rng);
  AdamState s(3, 3, 0.0);
  adam_step(p, s);
  CHECK(p.value == before);
}

TEST_CASE("global clipping rescales the joint norm") {
  Parameter a(Matrix::row({0, 0})), b(Matrix::row({0}));
  a.grad = Matrix::row({3, 0});
  b.grad = Matrix::row({4});
  std::vector<Parameter*> ps{&a, &b};
  CHECK(global_grad_norm(ps) == doctest::Approx(5));
  CHECK(clip_global_norm(ps, 1.0) == doctest::Approx(0.2));
  CHECK(global_grad_norm(ps) == doctest::Approx(1));
  CHECK(clip_global_norm(ps, 10.0) == 1);
  CHECK_THROWS(clip_global_norm(ps, 0.0));
}

TEST_CASE("matrix construction validates the value count") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<real>{1, 2, 3}), DimensionError);
  CHECK(Matrix::identity(3)(1, 1) == 1);
  CHECK(Matrix::identity(3)(0, 1) == 0);
  CHECK(Matrix(2, 3).transposed().shape_str() == "3x2");
}
