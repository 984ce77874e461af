#pragma once

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hsq/model.hpp"

namespace hsq {

// Sweep families mirroring the architecture studies: which stages carry
// blocks, how depth is split across stages, query count against width, and
// the expert pool against its routing budget.
enum class AblationAxis { stage_scheme, stage_ratio, query, moe };

inline AblationAxis ablation_axis_from_name(const std::string& name) {
  if (name == "stage_scheme") return AblationAxis::stage_scheme;
  if (name == "stage_ratio") return AblationAxis::stage_ratio;
  if (name == "query") return AblationAxis::query;
  if (name == "moe") return AblationAxis::moe;
  throw ConfigError("unknown ablation axis '" + name +
                    "', expected stage_scheme, stage_ratio, query, or moe");
}

inline const char* ablation_axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::stage_scheme: return "stage_scheme";
    case AblationAxis::stage_ratio: return "stage_ratio";
    case AblationAxis::query: return "query";
    case AblationAxis::moe: return "moe";
  }
  return "?";
}

struct AblationPoint {
  std::string label;
  ModelConfig config;
};

// The grids. All points share the single-depth top-1 base where the axis does
// not say otherwise, so each sweep moves exactly one lever.
inline std::vector<AblationPoint> ablation_grid(AblationAxis axis) {
  ModelConfig base;
  base.q = 200;
  base.d = 384;
  base.depths = {1, 1, 1, 1};
  base.experts = 4;
  base.top_k = 1;

  std::vector<AblationPoint> grid;
  switch (axis) {
    case AblationAxis::stage_scheme: {
      // Blocks enter from the last stage backwards until every stage has one.
      const std::array<std::array<bool, 4>, 4> schemes = {{
          {false, false, false, true},
          {false, false, true, true},
          {false, true, true, true},
          {true, true, true, true},
      }};
      for (const auto& enabled : schemes) {
        ModelConfig c = base;
        c.enabled = enabled;
        std::string label = "stages_";
        for (std::size_t i = 0; i < 4; ++i) {
          if (enabled[i]) label += std::to_string(i + 1);
        }
        grid.push_back({label, c});
      }
      break;
    }
    case AblationAxis::stage_ratio: {
      const std::vector<std::array<std::size_t, 4>> ratios = {
          {1, 1, 1, 1}, {2, 2, 2, 2}, {2, 2, 6, 2}, {3, 4, 6, 3}, {2, 3, 16, 3}};
      for (const auto& depths : ratios) {
        ModelConfig c = base;
        c.depths = depths;
        std::string label = "ratio_" + std::to_string(depths[0]);
        for (std::size_t i = 1; i < 4; ++i) label += "-" + std::to_string(depths[i]);
        grid.push_back({label, c});
      }
      break;
    }
    case AblationAxis::query: {
      for (const std::size_t q : {50u, 100u, 200u, 300u, 400u}) {
        for (const std::size_t d : {96u, 192u, 384u, 768u}) {
          ModelConfig c = base;
          c.q = q;
          c.d = d;
          grid.push_back({"q" + std::to_string(q) + "_d" + std::to_string(d), c});
        }
      }
      break;
    }
    case AblationAxis::moe: {
      // One-expert baseline (a plain MLP block), sparse pools with top-1 and
      // top-2 routing, and the dense arm that activates every expert.
      ModelConfig mlp = base;
      mlp.experts = 1;
      mlp.top_k = 1;
      grid.push_back({"mlp_e1", mlp});
      for (const std::size_t e : {2u, 4u, 8u}) {
        for (const std::size_t k : {1u, 2u}) {
          ModelConfig c = base;
          c.experts = e;
          c.top_k = k;
          grid.push_back({"e" + std::to_string(e) + "_top" + std::to_string(k), c});
        }
      }
      for (const std::size_t e : {2u, 4u, 8u}) {
        ModelConfig c = base;
        c.experts = e;
        c.top_k = 1;
        c.dense_moe = true;
        grid.push_back({"e" + std::to_string(e) + "_dense", c});
      }
      break;
    }
  }
  return grid;
}

struct AblationRow {
  std::string axis;
  std::string label;
  ModelConfig config;
  std::size_t params = 0;
  double median_ms = 0;
  double p95_ms = 0;
};

// Builds and times every grid point on synthetic inputs. Each model lives
// only for its own measurement, so peak memory is one configuration.
inline std::vector<AblationRow> run_ablation(AblationAxis axis, std::size_t h,
                                             std::size_t w, std::uint64_t seed,
                                             std::size_t reps = 3) {
  const auto cnn = synth_pyramid<double>(h, w, kDefaultChannels, hash_combine(seed, 1));
  const auto vit = synth_pyramid<double>(h, w, kDefaultChannels, hash_combine(seed, 2));
  std::vector<AblationRow> rows;
  for (const auto& point : ablation_grid(axis)) {
    AblationRow row;
    row.axis = ablation_axis_name(axis);
    row.label = point.label;
    row.config = point.config;
    {
      const auto model = build_model<double>(point.config, kDefaultChannels, seed);
      row.params = param_count(model);
      const BenchResult bench = bench_forward(model, cnn, vit, {}, reps);
      row.median_ms = bench.median_ms;
      row.p95_ms = bench.p95_ms;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline constexpr const char* kAblationCsvHeader =
    "axis,point,q,d,depths,experts,top_k,dense,stages,params,median_ms,p95_ms";

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << kAblationCsvHeader << "\n";
  for (const auto& r : rows) {
    std::string depths, stages;
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      depths += (i ? "|" : "") + std::to_string(r.config.depths[i]);
      if (r.config.enabled[i]) stages += std::to_string(i);
    }
    std::ostringstream line;
    line << r.axis << ',' << r.label << ',' << r.config.q << ',' << r.config.d << ','
         << depths << ',' << r.config.experts << ',' << r.config.top_k << ','
         << (r.config.dense_moe ? 1 : 0) << ',' << stages << ',' << r.params << ','
         << std::fixed << std::setprecision(3) << r.median_ms << ',' << r.p95_ms;
    os << line.str() << "\n";
  }
}

}  // namespace hsq
