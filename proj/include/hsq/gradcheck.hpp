#pragma once

#include <functional>

#include "hsq/matrix.hpp"

namespace hsq {

// Central finite differences of a scalar function of a matrix argument.
// Perturbs one entry at a time; x is restored between probes.
template <typename T>
Matrix<T> finite_diff_grad(const std::function<T(const Matrix<T>&)>& f, Matrix<T> x,
                           T h) {
  Matrix<T> g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T saved = x.data()[i];
    x.data()[i] = saved + h;
    const T fp = f(x);
    x.data()[i] = saved - h;
    const T fm = f(x);
    x.data()[i] = saved;
    g.data()[i] = (fp - fm) / (T{2} * h);
  }
  return g;
}

// Relative error with an absolute floor: entries where both gradients are
// below the floor are compared absolutely, which keeps finite-difference
// noise on near-zero entries from dominating the report.
template <typename T>
T max_relative_error(const Matrix<T>& a, const Matrix<T>& b, T floor = T{1e-4}) {
  if (!a.same_shape(b)) {
    throw ContractViolation("max_relative_error: shape mismatch (" + a.shape_str() +
                            " vs " + b.shape_str() + ")");
  }
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T av = std::abs(a.data()[i]);
    const T bv = std::abs(b.data()[i]);
    const T denom = std::max(std::max(av, bv), floor);
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / denom);
  }
  return worst;
}

}  // namespace hsq
