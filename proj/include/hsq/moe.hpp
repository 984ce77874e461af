#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsq/autodiff.hpp"
#include "hsq/matrix.hpp"
#include "hsq/rng.hpp"

namespace hsq {

// Position-wise feed-forward expert: d -> 4d -> d with exact-erf gelu.
template <typename T>
struct Expert {
  Matrix<T> w1, b1, w2, b2;
};

template <typename T>
struct MoeLayer {
  Matrix<T> gate_w;  // d x e, bias-free
  std::vector<Expert<T>> experts;
  std::size_t top_k = 1;
  T noise_std = 0;

  static MoeLayer make(std::size_t d, std::size_t e, std::size_t k) {
    if (e == 0) throw ConfigError("moe: expert count must be positive");
    if (k == 0 || k > e) {
      throw ConfigError("moe: top_k " + std::to_string(k) + " outside [1, " +
                        std::to_string(e) + "]");
    }
    MoeLayer l;
    l.gate_w = Matrix<T>(d, e);
    l.experts.resize(e);
    const std::size_t hidden = 4 * d;
    for (auto& ex : l.experts) {
      ex.w1 = Matrix<T>(d, hidden);
      ex.b1 = Matrix<T>(1, hidden);
      ex.w2 = Matrix<T>(hidden, d);
      ex.b2 = Matrix<T>(1, d);
    }
    l.top_k = k;
    return l;
  }

  std::size_t width() const { return gate_w.rows(); }
  std::size_t num_experts() const { return experts.size(); }
};

// Outcome of routing a token batch: for every token, its k chosen experts in
// descending (noisy) gate-logit order, and the softmax over exactly those
// survivors. Ties pick the lower expert index.
template <typename T>
struct RouterDecision {
  std::size_t top_k = 0;
  std::size_t num_experts = 0;
  std::vector<std::size_t> experts;  // tokens x top_k, row-major
  Matrix<T> gates;                   // tokens x top_k

  std::size_t expert_at(std::size_t token, std::size_t rank) const {
    return experts[token * top_k + rank];
  }
};

// Instrumentation hook: counts how many (token, expert) evaluations actually
// ran, which is how tests pin down the sparsity contract.
struct MoeEvalCounter {
  std::vector<std::size_t> tokens_per_expert;
  std::size_t total() const {
    return std::accumulate(tokens_per_expert.begin(), tokens_per_expert.end(),
                           std::size_t{0});
  }
};

struct RouteOptions {
  std::uint64_t noise_seed = 0;
  // Distinguishes layers so their noise streams never collide.
  std::uint64_t layer_tag = 0;
  std::optional<bool> dense_override;
};

// Gate noise is counter-based: the draw for (layer, token, expert) is a pure
// function of those coordinates, so routing does not depend on evaluation
// order or thread schedule.
template <typename T>
Matrix<T> gate_noise(std::size_t tokens, std::size_t e, T noise_std,
                     const RouteOptions& opt) {
  Matrix<T> noise(tokens, e);
  const std::uint64_t stream = hash_combine(opt.noise_seed, opt.layer_tag);
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t j = 0; j < e; ++j) {
      noise(i, j) = noise_std * static_cast<T>(normal_at(stream, i * e + j));
    }
  }
  return noise;
}

// Pure routing: logits = x gate_w (+ noise), keep the top k per token, gate
// with a softmax over the kept values.
template <typename T>
RouterDecision<T> route(const Matrix<T>& x, const MoeLayer<T>& layer,
                        std::size_t k, const RouteOptions& opt = {}) {
  const std::size_t e = layer.num_experts();
  if (k == 0 || k > e) {
    throw ContractViolation("route: top_k " + std::to_string(k) + " outside [1, " +
                            std::to_string(e) + "]");
  }
  Matrix<T> logits = matmul(x, layer.gate_w);
  if (layer.noise_std > T{0}) {
    logits = add(logits, gate_noise(x.rows(), e, layer.noise_std, opt));
  }

  RouterDecision<T> d;
  d.top_k = k;
  d.num_experts = e;
  d.experts.resize(x.rows() * k);
  Matrix<T> survivors(x.rows(), k);
  std::vector<std::size_t> idx(e);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const T* row = logits.row(i);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                      [row](std::size_t a, std::size_t b) {
                        if (row[a] != row[b]) return row[a] > row[b];
                        return a < b;
                      });
    for (std::size_t j = 0; j < k; ++j) {
      d.experts[i * k + j] = idx[j];
      survivors(i, j) = row[idx[j]];
    }
  }
  d.gates = softmax_rows(survivors);
  return d;
}

template <typename T>
std::vector<std::size_t> expert_utilization(const RouterDecision<T>& d) {
  std::vector<std::size_t> counts(d.num_experts, 0);
  for (const std::size_t e : d.experts) ++counts[e];
  return counts;
}

template <typename T>
Var<T> expert_forward(const Expert<T>& ex, const Var<T>& x, Binder<T>& binder,
                      const std::string& prefix) {
  const Var<T> h = gelu(add_row(matmul(x, binder.param(prefix + ".w1", ex.w1)),
                                binder.param(prefix + ".b1", ex.b1)));
  return add_row(matmul(h, binder.param(prefix + ".w2", ex.w2)),
                 binder.param(prefix + ".b2", ex.b2));
}

template <typename T>
struct MoeOutput {
  Var<T> out;
  RouterDecision<T> decision;
};

// Sparse mixture forward. Experts see only the tokens routed to them, via one
// gather per expert; contributions come back through scatter-add in expert
// index order, so results do not depend on scheduling. Gate values stay on
// the tape through the gathered survivor logits, which is exactly the subset
// the gradient may flow through; unselected logits never touch the output.
//
// dense_override = true routes with k = num_experts, activating every expert
// while keeping this same code path.
template <typename T>
MoeOutput<T> moe_forward(const Var<T>& x, const MoeLayer<T>& layer, Binder<T>& binder,
                         const std::string& prefix, const RouteOptions& opt = {},
                         MoeEvalCounter* counter = nullptr) {
  const Matrix<T>& xv = x.value();
  if (xv.cols() != layer.width()) {
    throw ContractViolation(prefix + ": token width " + std::to_string(xv.cols()) +
                            " does not match gate width " +
                            std::to_string(layer.width()));
  }
  const std::size_t n = xv.rows();
  const std::size_t e = layer.num_experts();
  const std::size_t k = opt.dense_override.value_or(false) ? e : layer.top_k;

  MoeOutput<T> r;
  r.decision = route(xv, layer, k, opt);

  Var<T> logits = matmul(x, binder.param(prefix + ".gate.w", layer.gate_w));
  if (layer.noise_std > T{0}) {
    logits = add(logits, constant(gate_noise(n, e, layer.noise_std, opt)));
  }
  using Pos = std::pair<std::size_t, std::size_t>;
  auto survivor_pos = std::make_shared<std::vector<Pos>>();
  survivor_pos->reserve(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      survivor_pos->emplace_back(i, r.decision.expert_at(i, j));
    }
  }
  const Var<T> gates = softmax_rows(gather_entries(
      logits, std::shared_ptr<const std::vector<Pos>>(survivor_pos), n, k));

  // Counters accumulate across calls so one counter can watch a whole model.
  if (counter && counter->tokens_per_expert.size() < e) {
    counter->tokens_per_expert.resize(e, 0);
  }

  Var<T> acc;
  bool have_acc = false;
  for (std::size_t ex = 0; ex < e; ++ex) {
    auto rows = std::make_shared<std::vector<std::size_t>>();
    auto gate_pos = std::make_shared<std::vector<Pos>>();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (r.decision.expert_at(i, j) == ex) {
          rows->push_back(i);
          gate_pos->emplace_back(i, j);
        }
      }
    }
    if (rows->empty()) continue;
    if (counter) counter->tokens_per_expert[ex] += rows->size();

    const auto rows_c = std::shared_ptr<const std::vector<std::size_t>>(rows);
    const Var<T> xe = gather_rows(x, rows_c);
    const Var<T> fe = expert_forward(layer.experts[ex], xe, binder,
                                     prefix + ".expert" + std::to_string(ex));
    const Var<T> ge = gather_entries(
        gates, std::shared_ptr<const std::vector<Pos>>(gate_pos), rows_c->size(), 1);
    const Var<T> contrib = scatter_rows(scale_rows(fe, ge), rows_c, n);
    acc = have_acc ? add(acc, contrib) : contrib;
    have_acc = true;
  }
  r.out = acc;
  return r;
}

// Dense reference mixture: softmax over all gate logits in natural expert
// order, every expert applied to every token, contributions summed by expert
// index. Kept deliberately free of the routing machinery so it can serve as
// an independent oracle for the sparse path.
template <typename T>
Matrix<T> dense_moe_forward(const Matrix<T>& x, const MoeLayer<T>& layer,
                            const RouteOptions& opt = {}) {
  Matrix<T> logits = matmul(x, layer.gate_w);
  if (layer.noise_std > T{0}) {
    logits = add(logits, gate_noise(x.rows(), layer.num_experts(), layer.noise_std, opt));
  }
  return dense_moe_forward(x, layer, softmax_rows(logits));
}

// Masked-gate variant of the dense reference: caller supplies the full
// tokens x experts gate matrix (for example the sparse gates scattered into
// place with zeros elsewhere).
template <typename T>
Matrix<T> dense_moe_forward(const Matrix<T>& x, const MoeLayer<T>& layer,
                            const Matrix<T>& gates) {
  if (gates.rows() != x.rows() || gates.cols() != layer.num_experts()) {
    throw ContractViolation("dense_moe_forward: gate matrix shape " + gates.shape_str() +
                            " does not match tokens x experts");
  }
  Matrix<T> out(x.rows(), layer.width());
  Binder<T> eval;
  for (std::size_t e = 0; e < layer.num_experts(); ++e) {
    const Var<T> fe = expert_forward(layer.experts[e], constant_ref(x), eval,
                                     "dense.expert" + std::to_string(e));
    const Matrix<T>& fv = fe.value();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const T g = gates(i, e);
      const T* pf = fv.row(i);
      T* po = out.row(i);
      for (std::size_t j = 0; j < out.cols(); ++j) po[j] += g * pf[j];
    }
  }
  return out;
}

}  // namespace hsq
