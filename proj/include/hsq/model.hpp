#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hsq/binio.hpp"
#include "hsq/projector.hpp"
#include "hsq/pyramid.hpp"

namespace hsq {

// Four stages, one per pyramid level, coarse to fine control lives in depths.
// Queries enter stage 0 and flow through every enabled stage in order; a
// disabled stage is skipped entirely, including its projector, so its pyramid
// level is never consumed.
struct ModelConfig {
  std::size_t q = 200;
  std::size_t d = 384;
  std::array<std::size_t, kPyramidLevels> depths = {1, 1, 1, 1};
  std::size_t experts = 4;
  std::size_t top_k = 1;
  CsmMode mode = CsmMode::serial;
  std::array<bool, kPyramidLevels> enabled = {true, true, true, true};
  bool dense_moe = false;
  std::size_t num_classes = 2;
  double init_std = 0.02;
  double noise_std = 0.0;

  void validate() const {
    if (q == 0) throw ConfigError("query count must be positive");
    if (d == 0) throw ConfigError("width must be positive");
    if (experts == 0) throw ConfigError("expert count must be positive");
    if (top_k == 0 || top_k > experts) {
      throw ConfigError("top_k " + std::to_string(top_k) + " outside [1, " +
                        std::to_string(experts) + "]");
    }
    if (num_classes < 2) throw ConfigError("need at least two classes");
    bool any = false;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      if (!enabled[i]) continue;
      any = true;
      if (depths[i] == 0) {
        throw ConfigError("stage " + std::to_string(i) +
                          " is enabled with zero depth");
      }
    }
    if (!any) throw ConfigError("at least one stage must be enabled");
    if (!(init_std > 0)) throw ConfigError("init_std must be positive");
    if (noise_std < 0) throw ConfigError("noise_std must be nonnegative");
  }
};

// Named sizes: S is the single-depth top-1 variant, B deepens stage 2 and
// routes top-2, L doubles queries and width and doubles the expert pool.
inline ModelConfig preset_s() {
  ModelConfig c;
  c.q = 200;
  c.d = 384;
  c.depths = {1, 1, 1, 1};
  c.experts = 4;
  c.top_k = 1;
  return c;
}

inline ModelConfig preset_b() {
  ModelConfig c;
  c.q = 200;
  c.d = 384;
  c.depths = {2, 2, 6, 2};
  c.experts = 4;
  c.top_k = 2;
  return c;
}

inline ModelConfig preset_l() {
  ModelConfig c;
  c.q = 400;
  c.d = 768;
  c.depths = {2, 2, 6, 2};
  c.experts = 8;
  c.top_k = 2;
  return c;
}

inline ModelConfig preset_by_name(const std::string& name) {
  if (name == "S" || name == "s") return preset_s();
  if (name == "B" || name == "b") return preset_b();
  if (name == "L" || name == "l") return preset_l();
  throw ConfigError("unknown preset '" + name + "', expected S, B, or L");
}

template <typename T>
struct HsqModel {
  ModelConfig config;
  std::array<std::size_t, kPyramidLevels> channels = kDefaultChannels;
  Matrix<T> queries;  // q x d
  std::array<std::optional<ProjectorLevel<T>>, kPyramidLevels> projectors;
  std::array<std::vector<CsmBlock<T>>, kPyramidLevels> stages;
  Matrix<T> head_w;  // d x num_classes
  Matrix<T> head_b;  // 1 x num_classes
};

namespace detail {

template <typename Block, typename Fn>
void visit_csm_params(const std::string& prefix, Block& b, Fn&& fn) {
  fn(prefix + ".cross.wq", b.cross.wq);
  fn(prefix + ".cross.wk", b.cross.wk);
  fn(prefix + ".cross.wv", b.cross.wv);
  fn(prefix + ".cross.wo", b.cross.wo);
  fn(prefix + ".self.wq", b.self_at.wq);
  fn(prefix + ".self.wk", b.self_at.wk);
  fn(prefix + ".self.wv", b.self_at.wv);
  fn(prefix + ".self.wo", b.self_at.wo);
  fn(prefix + ".norm1.gain", b.n1.gain);
  fn(prefix + ".norm1.bias", b.n1.bias);
  fn(prefix + ".norm2.gain", b.n2.gain);
  fn(prefix + ".norm2.bias", b.n2.bias);
  fn(prefix + ".norm3.gain", b.n3.gain);
  fn(prefix + ".norm3.bias", b.n3.bias);
  fn(prefix + ".moe.gate.w", b.moe.gate_w);
  for (std::size_t e = 0; e < b.moe.experts.size(); ++e) {
    const std::string ep = prefix + ".moe.expert" + std::to_string(e);
    fn(ep + ".w1", b.moe.experts[e].w1);
    fn(ep + ".b1", b.moe.experts[e].b1);
    fn(ep + ".w2", b.moe.experts[e].w2);
    fn(ep + ".b2", b.moe.experts[e].b2);
  }
}

}  // namespace detail

// Canonical parameter walk: queries, then per enabled stage its projector
// followed by its blocks, then the head. Initialization, checkpoints, and the
// gradient checker all rely on this one ordering.
template <typename Model, typename Fn>
void visit_params(Model& m, Fn&& fn) {
  fn("queries", m.queries);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (!m.config.enabled[i]) continue;
    auto& proj = *m.projectors[i];
    const std::string pp = "proj" + std::to_string(i);
    fn(pp + ".adapter_cnn", proj.adapter_cnn);
    fn(pp + ".adapter_vit", proj.adapter_vit);
    fn(pp + ".embed", proj.embed);
    detail::visit_csm_params(pp + ".fwd", proj.pair.fwd, fn);
    detail::visit_csm_params(pp + ".rev", proj.pair.rev, fn);
    fn(pp + ".fuse", proj.fuse);
    for (std::size_t j = 0; j < m.stages[i].size(); ++j) {
      detail::visit_csm_params("stage" + std::to_string(i) + ".block" + std::to_string(j),
                               m.stages[i][j], fn);
    }
  }
  fn("head.w", m.head_w);
  fn("head.b", m.head_b);
}

namespace detail {

inline bool name_ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline bool is_bias_param(const std::string& name) {
  return name_ends_with(name, ".bias") || name_ends_with(name, ".b1") ||
         name_ends_with(name, ".b2") || name_ends_with(name, ".b");
}

inline bool is_gain_param(const std::string& name) {
  return name_ends_with(name, ".gain");
}

// Shapes only, no values. Shared by fresh builds and checkpoint loads.
template <typename T>
HsqModel<T> allocate_model(const ModelConfig& config,
                           const std::array<std::size_t, kPyramidLevels>& channels) {
  config.validate();
  for (const std::size_t c : channels) {
    if (c == 0) throw ConfigError("channel count must be positive at every level");
  }
  HsqModel<T> m;
  m.config = config;
  m.channels = channels;
  m.queries = Matrix<T>(config.q, config.d);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (!config.enabled[i]) continue;
    m.projectors[i] = ProjectorLevel<T>::make(channels[i], config.d, config.experts,
                                              config.top_k, config.mode);
    m.stages[i].reserve(config.depths[i]);
    for (std::size_t j = 0; j < config.depths[i]; ++j) {
      m.stages[i].push_back(
          CsmBlock<T>::make(config.d, config.experts, config.top_k, config.mode));
    }
    for (auto& block : m.stages[i]) {
      block.moe.noise_std = static_cast<T>(config.noise_std);
    }
    m.projectors[i]->pair.fwd.moe.noise_std = static_cast<T>(config.noise_std);
    m.projectors[i]->pair.rev.moe.noise_std = static_cast<T>(config.noise_std);
  }
  m.head_w = Matrix<T>(config.d, config.num_classes);
  m.head_b = Matrix<T>(1, config.num_classes);
  return m;
}

}  // namespace detail

// Deterministic initialization: gains one, biases zero, everything else drawn
// from one sequential truncated-normal stream in canonical parameter order.
// Draws are rounded through float so checkpoints reproduce the fresh model
// exactly.
template <typename T>
HsqModel<T> build_model(const ModelConfig& config,
                        const std::array<std::size_t, kPyramidLevels>& channels,
                        std::uint64_t seed) {
  HsqModel<T> m = detail::allocate_model<T>(config, channels);
  Rng rng(seed);
  const T std_dev = static_cast<T>(config.init_std);
  visit_params(m, [&](const std::string& name, Matrix<T>& w) {
    if (detail::is_gain_param(name)) {
      w.fill(T{1});
    } else if (detail::is_bias_param(name)) {
      w.fill(T{0});
    } else {
      for (std::size_t i = 0; i < w.rows(); ++i) {
        T* row = w.row(i);
        for (std::size_t j = 0; j < w.cols(); ++j) {
          row[j] = static_cast<T>(static_cast<float>(rng.next_trunc_normal(std_dev)));
        }
      }
    }
  });
  return m;
}

template <typename T>
HsqModel<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  return build_model<T>(config, kDefaultChannels, seed);
}

template <typename T>
std::size_t param_count(const HsqModel<T>& m) {
  std::size_t n = 0;
  visit_params(m, [&](const std::string&, const Matrix<T>& w) { n += w.rows() * w.cols(); });
  return n;
}

// Closed-form parameter count for a configuration; must agree with
// param_count on any constructed model.
inline std::size_t csm_param_count(std::size_t d, std::size_t experts) {
  const std::size_t attn = 4 * d * d;          // wq, wk, wv, wo
  const std::size_t norms = 3 * 2 * d;         // three gain/bias pairs
  const std::size_t gate = d * experts;        // bias-free gate
  const std::size_t expert = 8 * d * d + 5 * d;  // d->4d->d with both biases
  return 2 * attn + norms + gate + experts * expert;
}

inline std::size_t config_param_count(
    const ModelConfig& config,
    const std::array<std::size_t, kPyramidLevels>& channels = kDefaultChannels) {
  config.validate();
  const std::size_t d = config.d;
  const std::size_t csm = csm_param_count(d, config.experts);
  std::size_t n = config.q * d;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (!config.enabled[i]) continue;
    n += 2 * channels[i] * d;  // branch adapters
    n += d;                    // level embedding
    n += 2 * csm;              // symmetric pair
    n += 2 * d * d;            // fusion
    n += config.depths[i] * csm;
  }
  n += d * config.num_classes + config.num_classes;
  return n;
}

// Routing decisions made while an input flowed through the model, tagged by
// the stage that made them. Projector decisions count toward their stage.
template <typename T>
struct StageRecord {
  std::size_t stage = 0;
  RouterDecision<T> decision;
};

template <typename T>
struct ModelOutput {
  Var<T> logits;  // 1 x num_classes
  std::vector<StageRecord<T>> records;
};

struct ForwardOptions {
  std::uint64_t noise_seed = 0;
  // Overrides config.dense_moe when set, so one built model can serve both
  // routing arms.
  std::optional<bool> dense_override;
};

namespace detail {
inline constexpr std::uint64_t kProjectorTagBase = 0xA11CE;
inline constexpr std::uint64_t kStageTagBase = 0xB10C;
}  // namespace detail

template <typename T>
ModelOutput<T> model_forward(const HsqModel<T>& m, const FeaturePyramid<T>& cnn,
                             const FeaturePyramid<T>& vit, Binder<T>& binder,
                             const ForwardOptions& opts = {},
                             MoeEvalCounter* counter = nullptr) {
  validate_pyramid(cnn);
  validate_pyramid(vit);
  if (cnn.height != vit.height || cnn.width != vit.width) {
    throw ContractViolation("branch inputs disagree on image size");
  }
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (!m.config.enabled[i]) continue;
    if (cnn.levels[i].channels != m.channels[i] ||
        vit.levels[i].channels != m.channels[i]) {
      throw ContractViolation("level " + std::to_string(i) +
                              " channels do not match the model");
    }
  }

  const bool dense = opts.dense_override.value_or(m.config.dense_moe);
  ModelOutput<T> out;
  Var<T> x = binder.param("queries", m.queries);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (!m.config.enabled[i]) continue;

    RouteOptions proj_opt;
    proj_opt.noise_seed = opts.noise_seed;
    proj_opt.layer_tag = hash_combine(detail::kProjectorTagBase, i);
    proj_opt.dense_override = dense;
    ProjectorOutput<T> latent =
        project(*m.projectors[i], constant_ref(cnn.levels[i].tokens),
                constant_ref(vit.levels[i].tokens), binder,
                "proj" + std::to_string(i), proj_opt, counter);
    out.records.push_back({i, std::move(latent.fwd_decision)});
    out.records.push_back({i, std::move(latent.rev_decision)});

    for (std::size_t j = 0; j < m.stages[i].size(); ++j) {
      RouteOptions block_opt;
      block_opt.noise_seed = opts.noise_seed;
      block_opt.layer_tag = hash_combine(hash_combine(detail::kStageTagBase, i), j);
      block_opt.dense_override = dense;
      CsmOutput<T> y = csm_forward(m.stages[i][j], x, latent.out, binder,
                                   "stage" + std::to_string(i) + ".block" +
                                       std::to_string(j),
                                   block_opt, counter);
      x = y.out;
      out.records.push_back({i, std::move(y.decision)});
    }
  }

  const Var<T> pooled = mean_rows(x);
  out.logits = add_row(matmul(pooled, binder.param("head.w", m.head_w)),
                       binder.param("head.b", m.head_b));
  return out;
}

template <typename T>
struct Prediction {
  Matrix<T> probabilities;  // 1 x num_classes
  std::vector<StageRecord<T>> records;
};

template <typename T>
Prediction<T> classify(const HsqModel<T>& m, const FeaturePyramid<T>& cnn,
                       const FeaturePyramid<T>& vit, const ForwardOptions& opts = {},
                       MoeEvalCounter* counter = nullptr) {
  Binder<T> eval;
  ModelOutput<T> out = model_forward(m, cnn, vit, eval, opts, counter);
  return Prediction<T>{softmax_rows(out.logits.value()), std::move(out.records)};
}

// Model checkpoint format. Layout, all little-endian:
//   magic "HSQW", version u32 = 1,
//   q u32, d u32, depths 4 x u32, experts u32, top_k u32, mode u8,
//   enabled-stage bitmask u8, dense u8, num_classes u32,
//   init_std f64, noise_std f64, channels 4 x u32,
//   blob count u64, then per parameter in canonical order:
//   name_len u32, name bytes, rows u64, cols u64, float32 row-major payload.
inline constexpr char kModelMagic[4] = {'H', 'S', 'Q', 'W'};
inline constexpr std::uint32_t kModelVersion = 1;

template <typename T>
void save_model(std::ostream& os, const HsqModel<T>& m) {
  detail::write_bytes(os, kModelMagic, 4);
  detail::write_pod(os, kModelVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(m.config.q));
  detail::write_pod(os, static_cast<std::uint32_t>(m.config.d));
  for (const std::size_t v : m.config.depths) {
    detail::write_pod(os, static_cast<std::uint32_t>(v));
  }
  detail::write_pod(os, static_cast<std::uint32_t>(m.config.experts));
  detail::write_pod(os, static_cast<std::uint32_t>(m.config.top_k));
  detail::write_pod(os, static_cast<std::uint8_t>(m.config.mode == CsmMode::serial ? 0 : 1));
  std::uint8_t mask = 0;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    if (m.config.enabled[i]) mask |= static_cast<std::uint8_t>(1u << i);
  }
  detail::write_pod(os, mask);
  detail::write_pod(os, static_cast<std::uint8_t>(m.config.dense_moe ? 1 : 0));
  detail::write_pod(os, static_cast<std::uint32_t>(m.config.num_classes));
  detail::write_pod(os, m.config.init_std);
  detail::write_pod(os, m.config.noise_std);
  for (const std::size_t c : m.channels) {
    detail::write_pod(os, static_cast<std::uint32_t>(c));
  }

  std::uint64_t count = 0;
  visit_params(m, [&](const std::string&, const Matrix<T>&) { ++count; });
  detail::write_pod(os, count);
  visit_params(m, [&](const std::string& name, const Matrix<T>& w) {
    detail::write_pod(os, static_cast<std::uint32_t>(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    detail::write_pod(os, static_cast<std::uint64_t>(w.rows()));
    detail::write_pod(os, static_cast<std::uint64_t>(w.cols()));
    detail::write_f32_payload(os, w);
  });
}

template <typename T>
void save_model_file(const std::string& path, const HsqModel<T>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError(IoErrorKind::file_access, "cannot open for writing: " + path);
  }
  save_model(os, m);
  if (!os) {
    throw IoError(IoErrorKind::file_access, "write failed: " + path);
  }
}

template <typename T>
HsqModel<T> load_model(std::istream& is, const std::string& ctx) {
  char magic[4];
  is.read(magic, 4);
  if (!is || is.gcount() != 4 || std::string(magic, 4) != std::string(kModelMagic, 4)) {
    throw IoError(IoErrorKind::bad_magic, ctx + ": not a model checkpoint");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, ctx);
  if (version != kModelVersion) {
    throw IoError(IoErrorKind::bad_version,
                  ctx + ": unsupported version " + std::to_string(version));
  }
  ModelConfig config;
  config.q = detail::read_pod<std::uint32_t>(is, ctx);
  config.d = detail::read_pod<std::uint32_t>(is, ctx);
  for (auto& v : config.depths) v = detail::read_pod<std::uint32_t>(is, ctx);
  config.experts = detail::read_pod<std::uint32_t>(is, ctx);
  config.top_k = detail::read_pod<std::uint32_t>(is, ctx);
  const auto mode = detail::read_pod<std::uint8_t>(is, ctx);
  if (mode > 1) {
    throw IoError(IoErrorKind::malformed,
                  ctx + ": unknown composition mode " + std::to_string(mode));
  }
  config.mode = mode == 0 ? CsmMode::serial : CsmMode::parallel;
  const auto mask = detail::read_pod<std::uint8_t>(is, ctx);
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    config.enabled[i] = (mask & (1u << i)) != 0;
  }
  config.dense_moe = detail::read_pod<std::uint8_t>(is, ctx) != 0;
  config.num_classes = detail::read_pod<std::uint32_t>(is, ctx);
  config.init_std = detail::read_pod<double>(is, ctx);
  config.noise_std = detail::read_pod<double>(is, ctx);
  std::array<std::size_t, kPyramidLevels> channels;
  for (auto& c : channels) c = detail::read_pod<std::uint32_t>(is, ctx);

  HsqModel<T> m;
  try {
    m = detail::allocate_model<T>(config, channels);
  } catch (const ConfigError& e) {
    throw IoError(IoErrorKind::malformed, ctx + ": invalid configuration: " + e.what());
  }

  std::vector<std::pair<std::string, Matrix<T>*>> slots;
  visit_params(m, [&](const std::string& name, Matrix<T>& w) {
    slots.emplace_back(name, &w);
  });
  const auto count = detail::read_pod<std::uint64_t>(is, ctx);
  if (count != slots.size()) {
    throw IoError(IoErrorKind::malformed,
                  ctx + ": checkpoint holds " + std::to_string(count) +
                      " tensors, configuration needs " + std::to_string(slots.size()));
  }
  for (auto& [name, w] : slots) {
    const auto name_len = detail::read_pod<std::uint32_t>(is, ctx);
    std::string stored(name_len, '\0');
    detail::read_bytes(is, stored.data(), name_len, ctx);
    if (stored != name) {
      throw IoError(IoErrorKind::malformed,
                    ctx + ": expected tensor '" + name + "', found '" + stored + "'");
    }
    const auto rows = detail::read_pod<std::uint64_t>(is, ctx);
    const auto cols = detail::read_pod<std::uint64_t>(is, ctx);
    if (rows != w->rows() || cols != w->cols()) {
      throw IoError(IoErrorKind::malformed,
                    ctx + ": tensor '" + name + "' has shape " + std::to_string(rows) +
                        "x" + std::to_string(cols) + ", expected " + w->shape_str());
    }
    detail::read_f32_payload(is, *w, ctx);
  }
  detail::expect_end_of_file(is, ctx);
  return m;
}

template <typename T>
HsqModel<T> load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError(IoErrorKind::file_access, "cannot open for reading: " + path);
  }
  return load_model<T>(is, path);
}

struct BenchResult {
  double median_ms = 0;
  double p95_ms = 0;
  std::size_t reps = 0;
  std::vector<double> times_ms;
};

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double percentile_nearest_rank(std::vector<double> v, double pct) {
  std::sort(v.begin(), v.end());
  const std::size_t rank =
      static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(v.size())));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

// Timed inference loop. One untimed warmup run, then reps timed runs; the
// caller gets every sample next to the summary stats.
template <typename T>
BenchResult bench_forward(const HsqModel<T>& m, const FeaturePyramid<T>& cnn,
                          const FeaturePyramid<T>& vit, const ForwardOptions& opts,
                          std::size_t reps) {
  if (reps < 3) {
    throw ConfigError("need at least 3 repetitions, got " + std::to_string(reps));
  }
  using clock = std::chrono::steady_clock;
  BenchResult r;
  r.reps = reps;
  r.times_ms.reserve(reps);
  for (std::size_t i = 0; i < reps + 1; ++i) {
    const auto t0 = clock::now();
    Binder<T> eval;
    ModelOutput<T> out = model_forward(m, cnn, vit, eval, opts);
    ensure_finite(out.logits.value(), "bench forward logits");
    const auto t1 = clock::now();
    if (i == 0) continue;  // warmup
    r.times_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  r.median_ms = median_of(r.times_ms);
  r.p95_ms = percentile_nearest_rank(r.times_ms, 95.0);
  return r;
}

}  // namespace hsq
