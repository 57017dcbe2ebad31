#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sva {

#ifdef SVA_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dense row-major matrix. Vectors are 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, real fill = 0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<real> data);
  static Matrix identity(std::size_t n);
  static Matrix row(std::vector<real> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  std::span<real> span() { return data_; }
  std::span<const real> span() const { return data_; }
  std::span<real> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const real> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<real>& data() const { return data_; }
  std::vector<real>& data() { return data_; }

  void fill(real v);
  Matrix transposed() const;
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<real> data_;
};

struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  explicit Parameter(Matrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
  void zero_grad() { grad.fill(0); }
};

enum class Activation { Sigmoid, Tanh, Relu };

real sigmoid(real x);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix activation(Activation kind, const Matrix& x);
Matrix rowwise_softmax(const Matrix& x);
// Cumulative sum of the row softmax: monotone gate values in (0, 1].
Matrix cumax(const Matrix& x);

// In-place span variants used by the cells' hot loops.
void softmax_inplace(std::span<real> v);
void cumax_inplace(std::span<real> v);
real log_sum_exp(std::span<const real> v);

// -ln softmax(logits)[target], natural log. `logits` must be a single row.
real cross_entropy(const Matrix& logits, std::size_t target);
real cross_entropy(std::span<const real> logits, std::size_t target);

struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t t = 0;
  real lr = 1e-3;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, real lr_ = 1e-3)
      : m(rows, cols), v(rows, cols), lr(lr_) {}
};

void adam_step(Parameter& p, AdamState& s);

// Rescales all grads so their joint L2 norm is at most max_norm; returns the factor.
real clip_global_norm(std::span<Parameter* const> params, real max_norm);
real global_grad_norm(std::span<Parameter* const> params);

}  // namespace sva
