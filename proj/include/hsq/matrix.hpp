#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "hsq/errors.hpp"
#include "hsq/parallel.hpp"

namespace hsq {

// Dense row-major matrix. All tensors in the library are rank-2; token sets
// are rows, feature dimensions are columns.
template <typename T>
class Matrix {
  static_assert(std::is_floating_point_v<T>);

public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw ContractViolation("from_rows: ragged rows");
      std::copy(row.begin(), row.end(), m.row(r));
      ++r;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  T* row(std::size_t r) noexcept { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const noexcept { return data_.data() + r * cols_; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
inline void ensure_finite(const Matrix<T>& m, const char* op) {
  const T* p = m.data();
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      std::ostringstream os;
      os << op << ": non-finite value at flat index " << i << " of " << m.shape_str();
      throw ContractViolation(os.str());
    }
  }
}

namespace detail {

// Kernel tile: 4 output rows by one cache-line-pair of columns. Each output
// element accumulates over k in ascending order no matter which code path or
// thread touches it, which keeps results bit-identical across tilings,
// schedules, and the naive reference loop.
template <typename T>
constexpr std::size_t tile_cols() {
  return 128 / sizeof(T);
}

template <typename T>
void matmul_rows(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c,
                 std::size_t i0, std::size_t i1) {
  const std::size_t n = b.cols();
  const std::size_t kk = a.cols();
  constexpr std::size_t MR = 4;
  constexpr std::size_t NR = tile_cols<T>();
  std::size_t i = i0;
  for (; i + MR <= i1; i += MR) {
    const T* arow[MR];
    for (std::size_t r = 0; r < MR; ++r) arow[r] = a.row(i + r);
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) {
      T acc[MR][NR] = {};
      for (std::size_t k = 0; k < kk; ++k) {
        const T* brow = b.row(k) + j;
        for (std::size_t r = 0; r < MR; ++r) {
          const T av = arow[r][k];
          for (std::size_t jj = 0; jj < NR; ++jj) acc[r][jj] += av * brow[jj];
        }
      }
      for (std::size_t r = 0; r < MR; ++r) {
        T* crow = c.row(i + r) + j;
        for (std::size_t jj = 0; jj < NR; ++jj) crow[jj] = acc[r][jj];
      }
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < MR; ++r) {
        T s = 0;
        for (std::size_t k = 0; k < kk; ++k) s += arow[r][k] * b(k, j);
        c(i + r, j) = s;
      }
    }
  }
  for (; i < i1; ++i) {
    const T* ar = a.row(i);
    std::size_t j = 0;
    for (; j + NR <= n; j += NR) {
      T acc[NR] = {};
      for (std::size_t k = 0; k < kk; ++k) {
        const T* brow = b.row(k) + j;
        const T av = ar[k];
        for (std::size_t jj = 0; jj < NR; ++jj) acc[jj] += av * brow[jj];
      }
      T* crow = c.row(i) + j;
      for (std::size_t jj = 0; jj < NR; ++jj) crow[jj] = acc[jj];
    }
    for (; j < n; ++j) {
      T s = 0;
      for (std::size_t k = 0; k < kk; ++k) s += ar[k] * b(k, j);
      c(i, j) = s;
    }
  }
}

constexpr std::size_t kParallelFlops = std::size_t{1} << 22;

}  // namespace detail

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* ar = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = ar[j];
  }
  return t;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ContractViolation("matmul: inner dimensions mismatch (" + a.shape_str() +
                            " by " + b.shape_str() + ")");
  }
  Matrix<T> c(a.rows(), b.cols());
  const std::size_t flops = a.rows() * a.cols() * b.cols();
  if (flops >= detail::kParallelFlops && max_threads() > 1 && a.rows() > 1) {
    parallel_for(a.rows(), [&](std::size_t r0, std::size_t r1) {
      detail::matmul_rows(a, b, c, r0, r1);
    });
  } else {
    detail::matmul_rows(a, b, c, 0, a.rows());
  }
  ensure_finite(c, "matmul");
  return c;
}

// c = a * b^T. Implemented by explicit transposition so the accumulation
// order over k matches matmul exactly.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ContractViolation("matmul_nt: inner dimensions mismatch (" + a.shape_str() +
                            " by " + b.shape_str() + "^T)");
  }
  return matmul(a, transpose(b));
}

// c = a^T * b.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ContractViolation("matmul_tn: inner dimensions mismatch (" + a.shape_str() +
                            "^T by " + b.shape_str() + ")");
  }
  return matmul(transpose(a), b);
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) {
    throw ContractViolation("add: shape mismatch (" + a.shape_str() + " vs " +
                            b.shape_str() + ")");
  }
  Matrix<T> c(a.rows(), a.cols());
  const T* pa = a.data();
  const T* pb = b.data();
  T* pc = c.data();
  for (std::size_t i = 0; i < a.size(); ++i) pc[i] = pa[i] + pb[i];
  return c;
}

template <typename T>
Matrix<T> sub(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) {
    throw ContractViolation("sub: shape mismatch (" + a.shape_str() + " vs " +
                            b.shape_str() + ")");
  }
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

template <typename T>
Matrix<T> scale(const Matrix<T>& a, T s) {
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
  return c;
}

template <typename T>
Matrix<T> hadamard(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) {
    throw ContractViolation("hadamard: shape mismatch (" + a.shape_str() + " vs " +
                            b.shape_str() + ")");
  }
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

// Adds a 1 x n row vector to every row of a.
template <typename T>
Matrix<T> add_row(const Matrix<T>& a, const Matrix<T>& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw ContractViolation("add_row: row shape " + r.shape_str() +
                            " does not broadcast over " + a.shape_str());
  }
  Matrix<T> c(a.rows(), a.cols());
  const T* pr = r.row(0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* pa = a.row(i);
    T* pc = c.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) pc[j] = pa[j] + pr[j];
  }
  return c;
}

template <typename T>
Matrix<T> col_sums(const Matrix<T>& a) {
  Matrix<T> s(1, a.cols());
  T* ps = s.row(0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* pa = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) ps[j] += pa[j];
  }
  return s;
}

// Numerically stable row softmax: shifts by the row max before exponentiating.
// Every output row sums to 1 up to rounding and all entries are positive.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  if (x.cols() == 0) throw ContractViolation("softmax_rows: zero-length rows");
  ensure_finite(x, "softmax_rows input");
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* px = x.row(i);
    T* py = y.row(i);
    T mx = px[0];
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, px[j]);
    T sum = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      py[j] = std::exp(px[j] - mx);
      sum += py[j];
    }
    const T inv = T{1} / sum;
    for (std::size_t j = 0; j < x.cols(); ++j) py[j] *= inv;
  }
  return y;
}

// Per-row statistics used by layer_norm and its gradient.
template <typename T>
struct RowMoments {
  std::vector<T> mean;
  std::vector<T> inv_std;  // 1 / sqrt(var + eps), population variance
};

template <typename T>
RowMoments<T> row_moments(const Matrix<T>& x, T eps) {
  RowMoments<T> m;
  m.mean.resize(x.rows());
  m.inv_std.resize(x.rows());
  const T invn = T{1} / static_cast<T>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* px = x.row(i);
    T s = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += px[j];
    const T mu = s * invn;
    T v = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const T d = px[j] - mu;
      v += d * d;
    }
    m.mean[i] = mu;
    m.inv_std[i] = T{1} / std::sqrt(v * invn + eps);
  }
  return m;
}

// y = gain * (x - mean) / sqrt(var + eps) + bias, per row. gain and bias are
// 1 x n. Rows must be non-empty and eps positive.
template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                     T eps) {
  if (x.cols() == 0) throw ContractViolation("layer_norm: zero-length rows");
  if (!(eps > T{0})) throw ContractViolation("layer_norm: eps must be positive");
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 ||
      bias.cols() != x.cols()) {
    throw ContractViolation("layer_norm: gain/bias shape mismatch for " + x.shape_str());
  }
  ensure_finite(x, "layer_norm input");
  const RowMoments<T> m = row_moments(x, eps);
  Matrix<T> y(x.rows(), x.cols());
  const T* pg = gain.row(0);
  const T* pb = bias.row(0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* px = x.row(i);
    T* py = y.row(i);
    const T mu = m.mean[i];
    const T is = m.inv_std[i];
    for (std::size_t j = 0; j < x.cols(); ++j) py[j] = pg[j] * (px[j] - mu) * is + pb[j];
  }
  return y;
}

// Exact-erf form: gelu(x) = 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Matrix<T> gelu(const Matrix<T>& x) {
  Matrix<T> y(x.rows(), x.cols());
  constexpr T inv_sqrt2 = T{0.7071067811865475244};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    y.data()[i] = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
  }
  ensure_finite(y, "gelu");
  return y;
}

// d gelu / dx = Phi(x) + x phi(x) with Phi the standard normal CDF.
template <typename T>
Matrix<T> gelu_grad(const Matrix<T>& x) {
  Matrix<T> g(x.rows(), x.cols());
  constexpr T inv_sqrt2 = T{0.7071067811865475244};
  constexpr T inv_sqrt2pi = T{0.3989422804014326779};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
    const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
    g.data()[i] = cdf + v * pdf;
  }
  return g;
}

template <typename T>
Matrix<T> slice_cols(const Matrix<T>& a, std::size_t begin, std::size_t len) {
  if (begin + len > a.cols()) {
    throw ContractViolation("slice_cols: range [" + std::to_string(begin) + ", " +
                            std::to_string(begin + len) + ") exceeds " + a.shape_str());
  }
  Matrix<T> c(a.rows(), len);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i) + begin, a.row(i) + begin + len, c.row(i));
  }
  return c;
}

template <typename T>
Matrix<T> concat_cols(const std::vector<const Matrix<T>*>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols: no inputs");
  const std::size_t rows = parts[0]->rows();
  std::size_t cols = 0;
  for (const auto* p : parts) {
    if (p->rows() != rows) throw ContractViolation("concat_cols: row count mismatch");
    cols += p->cols();
  }
  Matrix<T> c(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    T* pc = c.row(i);
    for (const auto* p : parts) {
      pc = std::copy(p->row(i), p->row(i) + p->cols(), pc);
    }
  }
  return c;
}

template <typename T>
Matrix<T> gather_rows(const Matrix<T>& a, const std::vector<std::size_t>& idx) {
  Matrix<T> c(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) {
      throw ContractViolation("gather_rows: index " + std::to_string(idx[i]) +
                              " out of range for " + a.shape_str());
    }
    std::copy(a.row(idx[i]), a.row(idx[i]) + a.cols(), c.row(i));
  }
  return c;
}

// Adds row i of a into row idx[i] of a zero matrix with total_rows rows.
// Duplicate indices accumulate in ascending source order.
template <typename T>
Matrix<T> scatter_rows(const Matrix<T>& a, const std::vector<std::size_t>& idx,
                       std::size_t total_rows) {
  if (idx.size() != a.rows()) throw ContractViolation("scatter_rows: index count mismatch");
  Matrix<T> c(total_rows, a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= total_rows) {
      throw ContractViolation("scatter_rows: index " + std::to_string(idx[i]) +
                              " out of range for " + std::to_string(total_rows) + " rows");
    }
    const T* pa = a.row(i);
    T* pc = c.row(idx[i]);
    for (std::size_t j = 0; j < a.cols(); ++j) pc[j] += pa[j];
  }
  return c;
}

// Multiplies row i of a by w(i, 0).
template <typename T>
Matrix<T> scale_rows(const Matrix<T>& a, const Matrix<T>& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) {
    throw ContractViolation("scale_rows: weight shape " + w.shape_str() +
                            " does not match " + a.shape_str());
  }
  Matrix<T> c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T s = w(i, 0);
    const T* pa = a.row(i);
    T* pc = c.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) pc[j] = pa[j] * s;
  }
  return c;
}

template <typename T>
Matrix<T> mean_rows(const Matrix<T>& a) {
  if (a.rows() == 0) throw ContractViolation("mean_rows: empty matrix");
  Matrix<T> m = col_sums(a);
  const T inv = T{1} / static_cast<T>(a.rows());
  for (std::size_t j = 0; j < a.cols(); ++j) m(0, j) *= inv;
  return m;
}

template <typename T>
T sum_all(const Matrix<T>& a) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  return s;
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) {
    throw ContractViolation("max_abs_diff: shape mismatch (" + a.shape_str() + " vs " +
                            b.shape_str() + ")");
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

// Lexicographic order over row contents; ties keep ascending index so the
// permutation is well defined even with duplicate rows.
template <typename T>
std::vector<std::size_t> lexicographic_row_order(const Matrix<T>& a) {
  std::vector<std::size_t> order(a.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const T* px = a.row(x);
    const T* py = a.row(y);
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (px[j] < py[j]) return true;
      if (px[j] > py[j]) return false;
    }
    return x < y;
  });
  return order;
}

}  // namespace hsq
