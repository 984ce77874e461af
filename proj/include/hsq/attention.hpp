#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hsq/autodiff.hpp"
#include "hsq/matrix.hpp"

namespace hsq {

// One head per 64 channels, floored, reduced until it divides the width.
inline std::size_t attention_heads(std::size_t d) {
  std::size_t h = d / 64;
  if (h == 0) h = 1;
  while (d % h != 0) --h;
  return h;
}

// Bias-free multi-head attention projections. Query, key, value, and output
// maps are all d x d.
template <typename T>
struct AttentionParams {
  Matrix<T> wq, wk, wv, wo;
  std::size_t heads = 1;

  static AttentionParams make(std::size_t d) {
    AttentionParams p;
    p.wq = Matrix<T>(d, d);
    p.wk = Matrix<T>(d, d);
    p.wv = Matrix<T>(d, d);
    p.wo = Matrix<T>(d, d);
    p.heads = attention_heads(d);
    return p;
  }
};

// Scaled dot-product attention of src onto tgt. Keys and values are first
// brought into a canonical order (lexicographic over row contents), so the
// arithmetic seen by every reduction is independent of how the caller ordered
// the target tokens; reordering tgt changes the output by exactly nothing.
// Self attention is the src == tgt special case of the same routine.
//
// weights_out, when non-null, receives the post-softmax attention matrix of
// every head, in head order, rows aligned with src.
template <typename T>
Var<T> cross_attention(const Var<T>& src, const Var<T>& tgt,
                       const AttentionParams<T>& p, Binder<T>& binder,
                       const std::string& prefix,
                       std::vector<Matrix<T>>* weights_out = nullptr) {
  const std::size_t d = p.wq.rows();
  if (src.cols() != d || tgt.cols() != d) {
    throw ContractViolation(prefix + ": attention width mismatch (" +
                            src.value().shape_str() + ", " + tgt.value().shape_str() +
                            " vs width " + std::to_string(d) + ")");
  }
  if (p.heads == 0 || d % p.heads != 0) {
    throw ContractViolation(prefix + ": head count does not divide width");
  }
  if (tgt.rows() == 0) throw ContractViolation(prefix + ": no target tokens");

  const auto order = std::make_shared<const std::vector<std::size_t>>(
      lexicographic_row_order(tgt.value()));
  const Var<T> tgt_c = gather_rows(tgt, order);

  const Var<T> q = matmul(src, binder.param(prefix + ".wq", p.wq));
  const Var<T> k = matmul(tgt_c, binder.param(prefix + ".wk", p.wk));
  const Var<T> v = matmul(tgt_c, binder.param(prefix + ".wv", p.wv));

  const std::size_t hd = d / p.heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<Var<T>> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Var<T> qh = slice_cols(q, h * hd, hd);
    const Var<T> kh = slice_cols(k, h * hd, hd);
    const Var<T> vh = slice_cols(v, h * hd, hd);
    const Var<T> attn = softmax_rows(scale(matmul_nt(qh, kh), inv_scale));
    if (weights_out) weights_out->push_back(attn.value());
    heads.push_back(matmul(attn, vh));
  }
  const Var<T> merged = p.heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(merged, binder.param(prefix + ".wo", p.wo));
}

template <typename T>
Var<T> self_attention(const Var<T>& x, const AttentionParams<T>& p, Binder<T>& binder,
                      const std::string& prefix,
                      std::vector<Matrix<T>>* weights_out = nullptr) {
  return cross_attention(x, x, p, binder, prefix, weights_out);
}

}  // namespace hsq
