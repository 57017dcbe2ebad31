#include "sva/kernels.hpp"

#include <cmath>

#include <omp.h>

namespace sva::kernels {

namespace {

void check_matmul(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape_str() + " by " + b.shape_str());
  }
  if (c.rows() != a.rows() || c.cols() != b.cols()) {
    throw DimensionError("matmul: output is " + c.shape_str() + ", expected " +
                         std::to_string(a.rows()) + "x" + std::to_string(b.cols()));
  }
}

// i-k-j order keeps the inner loop contiguous in both b and c.
inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t n = b.cols();
  real* ci = c.row_span(i).data();
  for (std::size_t j = 0; j < n; ++j) ci[j] = 0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const real aik = a(i, k);
    const real* bk = b.row_span(k).data();
    for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
  }
}

inline void gram_entry(const Matrix& x, Matrix& c, std::size_t i, std::size_t j) {
  c(i, j) = dot(x.row_span(i), x.row_span(j));
}

inline bool standardize_row(std::span<real> row) {
  const auto n = static_cast<real>(row.size());
  real mean = 0;
  for (real v : row) mean += v;
  mean /= n;
  real var = 0;
  for (real v : row) var += (v - mean) * (v - mean);
  var /= n;
  const real sd = std::sqrt(var);
  if (!(sd > 0) || sd < 1e-300) {
    for (real& v : row) v = 0;
    return false;
  }
  for (real& v : row) v = (v - mean) / sd;
  return true;
}

}  // namespace

namespace serial {

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
  check_matmul(a, b, c);
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
}

void gram(const Matrix& x, Matrix& c) {
  if (c.rows() != x.rows() || c.cols() != x.rows()) throw DimensionError("gram: bad output shape");
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.rows(); ++j) gram_entry(x, c, i, j);
}

std::size_t standardize_rows(Matrix& m) {
  std::size_t degenerate = 0;
  for (std::size_t r = 0; r < m.rows(); ++r)
    if (!standardize_row(m.row_span(r))) ++degenerate;
  return degenerate;
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace serial

namespace parallel {

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
  check_matmul(a, b, c);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static) if (a.rows() * a.cols() * b.cols() > 32768)
  for (std::ptrdiff_t i = 0; i < rows; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i));
}

void gram(const Matrix& x, Matrix& c) {
  if (c.rows() != x.rows() || c.cols() != x.rows()) throw DimensionError("gram: bad output shape");
  const auto rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(dynamic, 8) if (x.rows() > 64)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < x.rows(); ++j) gram_entry(x, c, static_cast<std::size_t>(i), j);
}

std::size_t standardize_rows(Matrix& m) {
  std::size_t degenerate = 0;
  const auto rows = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static) reduction(+ : degenerate) if (m.rows() > 64)
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    if (!standardize_row(m.row_span(static_cast<std::size_t>(r)))) ++degenerate;
  return degenerate;
}

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 1) if (n > 1)
  for (std::ptrdiff_t i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
}

}  // namespace parallel

void gemv_acc(const Matrix& w, std::span<const real> x, std::span<real> y) {
  const std::size_t in = w.cols();
  const real* wd = w.data().data();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const real* wr = wd + r * in;
    real s = 0;
    for (std::size_t c = 0; c < in; ++c) s += wr[c] * x[c];
    y[r] += s;
  }
}

void gemv_t_acc(const Matrix& w, std::span<const real> x, std::span<real> y) {
  const std::size_t in = w.cols();
  const real* wd = w.data().data();
  real* yd = y.data();
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const real xr = x[r];
    if (xr == 0) continue;
    const real* wr = wd + r * in;
    for (std::size_t c = 0; c < in; ++c) yd[c] += wr[c] * xr;
  }
}

void ger_acc(Matrix& a_mat, std::span<const real> a, std::span<const real> b) {
  const std::size_t n = a_mat.cols();
  real* d = a_mat.data().data();
  const real* bd = b.data();
  for (std::size_t r = 0; r < a_mat.rows(); ++r) {
    const real ar = a[r];
    if (ar == 0) continue;
    real* row = d + r * n;
    for (std::size_t c = 0; c < n; ++c) row[c] += ar * bd[c];
  }
}

real dot(std::span<const real> a, std::span<const real> b) {
  real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace sva::kernels
