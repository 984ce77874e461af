#pragma once

#include <string>
#include <vector>

#include "hsq/csm.hpp"

namespace hsq {

// Bridges one pyramid level into the query stream's width. Each branch gets
// its own linear adapter, both share one learned level embedding, then a
// symmetric block pair looks at the two branches from both sides and a fusion
// matrix folds the pair back to width d.
template <typename T>
struct ProjectorLevel {
  Matrix<T> adapter_cnn;  // channels x d
  Matrix<T> adapter_vit;  // channels x d
  Matrix<T> embed;        // 1 x d, shared by both branches
  SymmetricCsm<T> pair;
  Matrix<T> fuse;  // 2d x d

  static ProjectorLevel make(std::size_t channels, std::size_t d,
                             std::size_t experts, std::size_t k, CsmMode mode) {
    ProjectorLevel p;
    p.adapter_cnn = Matrix<T>(channels, d);
    p.adapter_vit = Matrix<T>(channels, d);
    p.embed = Matrix<T>(1, d);
    p.pair = SymmetricCsm<T>::make(d, experts, k, mode);
    p.fuse = Matrix<T>(2 * d, d);
    return p;
  }
};

template <typename T>
struct ProjectorOutput {
  Var<T> out;  // tokens x d
  RouterDecision<T> fwd_decision, rev_decision;
};

template <typename T>
ProjectorOutput<T> project(const ProjectorLevel<T>& level, const Var<T>& cnn,
                           const Var<T>& vit, Binder<T>& binder,
                           const std::string& prefix, const RouteOptions& opt = {},
                           MoeEvalCounter* counter = nullptr) {
  if (cnn.cols() != level.adapter_cnn.rows() ||
      vit.cols() != level.adapter_vit.rows()) {
    throw ContractViolation(prefix + ": token width does not match adapter input");
  }
  if (cnn.rows() != vit.rows()) {
    throw ContractViolation(prefix + ": branch token counts differ, " +
                            std::to_string(cnn.rows()) + " vs " +
                            std::to_string(vit.rows()));
  }
  const Var<T> embed = binder.param(prefix + ".embed", level.embed);
  const Var<T> a = add_row(
      matmul(cnn, binder.param(prefix + ".adapter_cnn", level.adapter_cnn)), embed);
  const Var<T> b = add_row(
      matmul(vit, binder.param(prefix + ".adapter_vit", level.adapter_vit)), embed);
  SymmetricOutput<T> sym = symmetric_forward(level.pair, a, b, binder, prefix, opt,
                                             counter);
  const Var<T> merged = concat_cols(std::vector<Var<T>>{sym.fwd, sym.rev});
  return ProjectorOutput<T>{matmul(merged, binder.param(prefix + ".fuse", level.fuse)),
                            std::move(sym.fwd_decision), std::move(sym.rev_decision)};
}

}  // namespace hsq
