#pragma once

// Data-parallel kernels. Every kernel has a plain serial reference in
// `serial::` and an OpenMP version in `parallel::`; both produce
// bit-identical results because each output element is computed by one
// thread in the same order.

#include <cstddef>
#include <functional>
#include <span>

#include "sva/numcore.hpp"

namespace sva::kernels {

namespace serial {

// c = a * b, c preshaped (a.rows x b.cols).
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
// c = x * x^T.
void gram(const Matrix& x, Matrix& c);
// Standardize each row to mean 0 / population std 1. Zero-variance rows become
// zeros; returns how many such rows were found.
std::size_t standardize_rows(Matrix& m);
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace serial

namespace parallel {

void matmul(const Matrix& a, const Matrix& b, Matrix& c);
void gram(const Matrix& x, Matrix& c);
std::size_t standardize_rows(Matrix& m);
// Runs fn(i) for i in [0, n) across OpenMP threads. fn must only write
// state owned by index i.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace parallel

// Single-vector BLAS-2 helpers for the recurrent cells (always serial; the
// cells are parallelized one level up, across sequences).
// y += W x   (W: out x in)
void gemv_acc(const Matrix& w, std::span<const real> x, std::span<real> y);
// y += W^T x
void gemv_t_acc(const Matrix& w, std::span<const real> x, std::span<real> y);
// A += a b^T
void ger_acc(Matrix& a_mat, std::span<const real> a, std::span<const real> b);
real dot(std::span<const real> a, std::span<const real> b);

}  // namespace sva::kernels
