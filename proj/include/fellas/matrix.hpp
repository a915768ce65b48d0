#pragma once

// Minimal dense row-major matrix plus the handful of vector kernels the
// models need. Loops are deliberate: gradients in model.hpp mirror these
// operations term by term.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fellas {

using Vec = std::vector<double>;

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  std::span<double> row(int i) { return {a.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int i) const { return {a.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)}; }

  bool empty() const { return a.empty(); }
  void zero() { std::fill(a.begin(), a.end(), 0.0); }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double cosine(std::span<const double> x, std::span<const double> y) {
  double nx = norm2(x), ny = norm2(y);
  if (nx == 0.0 || ny == 0.0)
    throw std::domain_error("cosine: zero-norm vector");
  return dot(x, y) / (nx * ny);
}

// y += M x
inline void matvec_add(const Matrix& m, std::span<const double> x, std::span<double> y) {
  if (static_cast<int>(x.size()) != m.cols || static_cast<int>(y.size()) != m.rows)
    throw std::invalid_argument("matvec_add: shape mismatch");
  for (int i = 0; i < m.rows; ++i) y[i] += dot(m.row(i), x);
}

// y += M^T x
inline void matvec_t_add(const Matrix& m, std::span<const double> x, std::span<double> y) {
  if (static_cast<int>(x.size()) != m.rows || static_cast<int>(y.size()) != m.cols)
    throw std::invalid_argument("matvec_t_add: shape mismatch");
  for (int i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    for (int j = 0; j < m.cols; ++j) y[j] += r[j] * x[i];
  }
}

// M += x y^T
inline void outer_add(Matrix& m, std::span<const double> x, std::span<const double> y) {
  if (static_cast<int>(x.size()) != m.rows || static_cast<int>(y.size()) != m.cols)
    throw std::invalid_argument("outer_add: shape mismatch");
  for (int i = 0; i < m.rows; ++i) {
    auto r = m.row(i);
    for (int j = 0; j < m.cols; ++j) r[j] += x[i] * y[j];
  }
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: size mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace fellas
