#pragma once

#include <string>
#include <vector>

#include "hsq/attention.hpp"
#include "hsq/moe.hpp"

namespace hsq {

enum class CsmMode { serial, parallel };

template <typename T>
struct LayerNormParams {
  Matrix<T> gain, bias;

  static LayerNormParams make(std::size_t d) {
    return LayerNormParams{Matrix<T>(1, d, T{1}), Matrix<T>(1, d, T{0})};
  }
};

inline constexpr double kLayerNormEps = 1e-6;

// Cross-attention, self-attention, mixture block with pre-norm residuals.
// The first norm set is shared by both attention operands, the second feeds
// self-attention, the third feeds the mixture.
template <typename T>
struct CsmBlock {
  AttentionParams<T> cross, self_at;
  LayerNormParams<T> n1, n2, n3;
  MoeLayer<T> moe;
  CsmMode mode = CsmMode::serial;

  static CsmBlock make(std::size_t d, std::size_t experts, std::size_t k,
                       CsmMode mode) {
    CsmBlock b;
    b.cross = AttentionParams<T>::make(d);
    b.self_at = AttentionParams<T>::make(d);
    b.n1 = LayerNormParams<T>::make(d);
    b.n2 = LayerNormParams<T>::make(d);
    b.n3 = LayerNormParams<T>::make(d);
    b.moe = MoeLayer<T>::make(d, experts, k);
    b.mode = mode;
    return b;
  }
};

template <typename T>
struct CsmOutput {
  Var<T> out;
  RouterDecision<T> decision;
};

template <typename T>
Var<T> csm_norm(const Var<T>& x, const LayerNormParams<T>& n, Binder<T>& binder,
                const std::string& prefix) {
  return layer_norm(x, binder.param(prefix + ".gain", n.gain),
                    binder.param(prefix + ".bias", n.bias), T{kLayerNormEps});
}

// Serial composition: each sublayer reads the running residual stream.
//   y1 = x + CA(n1(x), n1(tgt)); y2 = y1 + SA(n2(y1)); out = y2 + MOE(n3(y2))
// Parallel composition: both attentions read the block input.
//   y = x + CA(n1(x), n1(tgt)) + SA(n2(x)); out = y + MOE(n3(y))
template <typename T>
CsmOutput<T> csm_forward(const CsmBlock<T>& block, const Var<T>& src,
                         const Var<T>& tgt, Binder<T>& binder,
                         const std::string& prefix, const RouteOptions& opt = {},
                         MoeEvalCounter* counter = nullptr) {
  const Var<T> n1_src = csm_norm(src, block.n1, binder, prefix + ".norm1");
  const Var<T> n1_tgt = csm_norm(tgt, block.n1, binder, prefix + ".norm1");
  const Var<T> ca =
      cross_attention(n1_src, n1_tgt, block.cross, binder, prefix + ".cross");

  Var<T> y;
  if (block.mode == CsmMode::serial) {
    const Var<T> y1 = add(src, ca);
    const Var<T> sa = self_attention(csm_norm(y1, block.n2, binder, prefix + ".norm2"),
                                     block.self_at, binder, prefix + ".self");
    y = add(y1, sa);
  } else {
    const Var<T> sa = self_attention(csm_norm(src, block.n2, binder, prefix + ".norm2"),
                                     block.self_at, binder, prefix + ".self");
    y = add(src, add(ca, sa));
  }

  MoeOutput<T> mixed = moe_forward(csm_norm(y, block.n3, binder, prefix + ".norm3"),
                                   block.moe, binder, prefix + ".moe", opt, counter);
  return CsmOutput<T>{add(y, mixed.out), std::move(mixed.decision)};
}

// Two independent blocks looking at the same pair from both sides. Both read
// the original inputs; neither sees the other's output.
template <typename T>
struct SymmetricCsm {
  CsmBlock<T> fwd, rev;

  static SymmetricCsm make(std::size_t d, std::size_t experts, std::size_t k,
                           CsmMode mode) {
    return SymmetricCsm{CsmBlock<T>::make(d, experts, k, mode),
                        CsmBlock<T>::make(d, experts, k, mode)};
  }
};

template <typename T>
struct SymmetricOutput {
  Var<T> fwd, rev;
  RouterDecision<T> fwd_decision, rev_decision;
};

template <typename T>
SymmetricOutput<T> symmetric_forward(const SymmetricCsm<T>& pair, const Var<T>& a,
                                     const Var<T>& b, Binder<T>& binder,
                                     const std::string& prefix,
                                     const RouteOptions& opt = {},
                                     MoeEvalCounter* counter = nullptr) {
  RouteOptions fwd_opt = opt;
  fwd_opt.layer_tag = hash_combine(opt.layer_tag, 1);
  RouteOptions rev_opt = opt;
  rev_opt.layer_tag = hash_combine(opt.layer_tag, 2);
  CsmOutput<T> f = csm_forward(pair.fwd, a, b, binder, prefix + ".fwd", fwd_opt, counter);
  CsmOutput<T> r = csm_forward(pair.rev, b, a, binder, prefix + ".rev", rev_opt, counter);
  return SymmetricOutput<T>{f.out, r.out, std::move(f.decision), std::move(r.decision)};
}

}  // namespace hsq
