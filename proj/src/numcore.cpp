#include "sva/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sva/kernels.hpp"

namespace sva {

Matrix::Matrix(std::size_t rows, std::size_t cols, real fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
  return m;
}

Matrix Matrix::row(std::vector<real> values) {
  const std::size_t n = values.size();
  return Matrix(1, n, std::move(values));
}

std::string Matrix::shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

void Matrix::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](real v) { return std::isfinite(v); });
}

real sigmoid(real x) {
  // Split on sign so exp never overflows.
  if (x >= 0) return 1 / (1 + std::exp(-x));
  const real e = std::exp(x);
  return e / (1 + e);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape_str() + " by " + b.shape_str());
  }
  Matrix c(a.rows(), b.cols());
  kernels::parallel::matmul(a, b, c);
  return c;
}

Matrix activation(Activation kind, const Matrix& x) {
  Matrix y = x;
  for (real& v : y.span()) {
    switch (kind) {
      case Activation::Sigmoid: v = sigmoid(v); break;
      case Activation::Tanh: v = std::tanh(v); break;
      case Activation::Relu: v = v > 0 ? v : 0; break;
    }
  }
  return y;
}

void softmax_inplace(std::span<real> v) {
  if (v.empty()) return;
  const real mx = *std::max_element(v.begin(), v.end());
  real sum = 0;
  for (real& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (real& x : v) x /= sum;
}

void cumax_inplace(std::span<real> v) {
  softmax_inplace(v);
  real acc = 0;
  for (real& x : v) {
    acc += x;
    x = acc;
  }
  // Rounding can leave the tail a few ulps off 1; leading entries of extreme
  // rows underflow to 0, so they are held at the smallest normal value.
  if (!v.empty()) {
    for (real& x : v) x = std::clamp<real>(x, std::numeric_limits<real>::min(), 1);
    v.back() = 1;
  }
}

real log_sum_exp(std::span<const real> v) {
  const real mx = *std::max_element(v.begin(), v.end());
  real sum = 0;
  for (real x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

Matrix rowwise_softmax(const Matrix& x) {
  Matrix y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.row_span(r));
  return y;
}

Matrix cumax(const Matrix& x) {
  Matrix y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) cumax_inplace(y.row_span(r));
  return y;
}

real cross_entropy(std::span<const real> logits, std::size_t target) {
  if (target >= logits.size()) {
    throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  return log_sum_exp(logits) - logits[target];
}

real cross_entropy(const Matrix& logits, std::size_t target) {
  if (logits.rows() != 1) throw DimensionError("cross_entropy: expected one row, got " + logits.shape_str());
  return cross_entropy(logits.span(), target);
}

void adam_step(Parameter& p, AdamState& s) {
  if (!p.value.same_shape(p.grad) || !p.value.same_shape(s.m) || !p.value.same_shape(s.v)) {
    throw DimensionError("adam_step: parameter " + p.value.shape_str() + " vs state " + s.m.shape_str());
  }
  s.t += 1;
  const real t = static_cast<real>(s.t);
  const real c1 = 1 - std::pow(s.beta1, t);
  const real c2 = 1 - std::pow(s.beta2, t);
  auto val = p.value.span();
  auto g = p.grad.span();
  auto m = s.m.span();
  auto v = s.v.span();
  for (std::size_t i = 0; i < val.size(); ++i) {
    m[i] = s.beta1 * m[i] + (1 - s.beta1) * g[i];
    v[i] = s.beta2 * v[i] + (1 - s.beta2) * g[i] * g[i];
    const real mhat = m[i] / c1;
    const real vhat = v[i] / c2;
    val[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
}

real global_grad_norm(std::span<Parameter* const> params) {
  real sq = 0;
  for (const Parameter* p : params)
    for (real g : p->grad.span()) sq += g * g;
  return std::sqrt(sq);
}

real clip_global_norm(std::span<Parameter* const> params, real max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_global_norm: max_norm must be positive");
  const real norm = global_grad_norm(params);
  if (norm <= max_norm) return 1;
  const real factor = max_norm / norm;
  for (Parameter* p : params)
    for (real& g : p->grad.span()) g *= factor;
  return factor;
}

}  // namespace sva
