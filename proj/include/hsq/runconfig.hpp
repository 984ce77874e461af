#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hsq/model.hpp"

namespace hsq {

// Everything a command run needs, gathered from an optional key=value file
// plus command-line flags. Flags override file values; both funnel through
// the same setter so they are validated identically.
struct RunConfig {
  ModelConfig model;
  std::array<std::size_t, kPyramidLevels> channels = kDefaultChannels;
  bool channels_set = false;  // false: adopt channels from the input files
  std::size_t height = 224;
  std::size_t width = 224;
  std::uint64_t seed = 0;
  std::uint64_t noise_seed = 0;
  std::string precision = "f64";
  std::string cnn_path, vit_path, checkpoint_path, out_path;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    if (value.empty() || value[0] == '-') throw std::invalid_argument(value);
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a nonnegative integer, got '" + value + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

inline std::array<std::size_t, kPyramidLevels> parse_list4(const std::string& key,
                                                           const std::string& value) {
  std::array<std::size_t, kPyramidLevels> out{};
  std::stringstream ss(value);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= kPyramidLevels) {
      throw ConfigError(key + ": expected 4 comma-separated values, got '" + value + "'");
    }
    out[i++] = parse_size(key, trim(part));
  }
  if (i != kPyramidLevels) {
    throw ConfigError(key + ": expected 4 comma-separated values, got '" + value + "'");
  }
  return out;
}

}  // namespace detail

// Applies one key=value assignment. Shared by the file parser and by flag
// handling, so an unknown or ill-typed key fails the same way from both.
inline void apply_run_config_entry(RunConfig& cfg, const std::string& key,
                                   const std::string& value) {
  if (key == "preset") {
    cfg.model = preset_by_name(value);
  } else if (key == "q") {
    cfg.model.q = detail::parse_size(key, value);
  } else if (key == "d") {
    cfg.model.d = detail::parse_size(key, value);
  } else if (key == "depths") {
    cfg.model.depths = detail::parse_list4(key, value);
  } else if (key == "experts") {
    cfg.model.experts = detail::parse_size(key, value);
  } else if (key == "top_k") {
    cfg.model.top_k = detail::parse_size(key, value);
  } else if (key == "mode") {
    if (value == "serial") {
      cfg.model.mode = CsmMode::serial;
    } else if (value == "parallel") {
      cfg.model.mode = CsmMode::parallel;
    } else {
      throw ConfigError("mode: expected serial or parallel, got '" + value + "'");
    }
  } else if (key == "stages") {
    std::array<bool, kPyramidLevels> enabled = {false, false, false, false};
    if (value == "all") {
      enabled = {true, true, true, true};
    } else {
      std::stringstream ss(value);
      std::string part;
      while (std::getline(ss, part, ',')) {
        const std::size_t i = detail::parse_size(key, detail::trim(part));
        if (i >= kPyramidLevels) {
          throw ConfigError("stages: index " + std::to_string(i) + " outside 0..3");
        }
        enabled[i] = true;
      }
    }
    cfg.model.enabled = enabled;
  } else if (key == "dense_moe") {
    cfg.model.dense_moe = detail::parse_bool(key, value);
  } else if (key == "num_classes") {
    cfg.model.num_classes = detail::parse_size(key, value);
  } else if (key == "init_std") {
    cfg.model.init_std = detail::parse_real(key, value);
  } else if (key == "noise_std") {
    cfg.model.noise_std = detail::parse_real(key, value);
  } else if (key == "channels") {
    cfg.channels = detail::parse_list4(key, value);
    cfg.channels_set = true;
  } else if (key == "height") {
    cfg.height = detail::parse_size(key, value);
  } else if (key == "width") {
    cfg.width = detail::parse_size(key, value);
  } else if (key == "seed") {
    cfg.seed = detail::parse_size(key, value);
  } else if (key == "noise_seed") {
    cfg.noise_seed = detail::parse_size(key, value);
  } else if (key == "precision") {
    if (value != "f32" && value != "f64") {
      throw ConfigError("precision: expected f32 or f64, got '" + value + "'");
    }
    cfg.precision = value;
  } else if (key == "cnn") {
    cfg.cnn_path = value;
  } else if (key == "vit") {
    cfg.vit_path = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint_path = value;
  } else if (key == "out") {
    cfg.out_path = value;
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

// Text format: one key=value per line, '#' starts a comment, blank lines are
// skipped. The parsed model configuration is revalidated before returning.
inline RunConfig parse_run_config(std::istream& is, const std::string& ctx,
                                  RunConfig cfg = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(ctx + " line " + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(ctx + " line " + std::to_string(line_no) + ": empty key");
    }
    try {
      apply_run_config_entry(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(ctx + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  cfg.model.validate();
  return cfg;
}

inline RunConfig parse_run_config_file(const std::string& path, RunConfig cfg = {}) {
  std::ifstream is(path);
  if (!is) {
    throw IoError(IoErrorKind::file_access, "cannot open for reading: " + path);
  }
  return parse_run_config(is, path, std::move(cfg));
}

}  // namespace hsq
