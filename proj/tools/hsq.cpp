// Command-line surface for the hierarchical sparse-query classifier library:
// synthesize input fixtures, run forward passes, check gradients, sweep
// ablation grids, benchmark, and score result tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "hsq/hsq.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitContract = 4;
constexpr int kExitTolerance = 5;

std::string file_stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

// Stream sink that is either stdout or a file the caller asked for.
class OutputTarget {
public:
  explicit OutputTarget(const std::string& path) {
    if (path.empty()) return;
    file_.open(path);
    if (!file_) {
      throw hsq::IoError(hsq::IoErrorKind::file_access,
                         "cannot open for writing: " + path);
    }
    path_ = path;
  }
  std::ostream& stream() { return path_.empty() ? std::cout : file_; }
  void finish() {
    if (path_.empty()) return;
    file_.flush();
    if (!file_) {
      throw hsq::IoError(hsq::IoErrorKind::file_access, "write failed: " + path_);
    }
    std::cerr << "wrote " << path_ << "\n";
  }

private:
  std::string path_;
  std::ofstream file_;
};

// Model and run settings as raw flag strings. Empty means "not given"; every
// non-empty value funnels through the same setter as the config file, so both
// sources validate identically and flags win by being applied last.
struct RunFlags {
  std::string config_file;
  std::string preset, q, d, depths, experts, top_k, mode, stages, dense, num_classes,
      init_std, noise_std, channels, height, width, seed, noise_seed, precision, cnn,
      vit, checkpoint, out;

  void attach(CLI::App* cmd, bool with_files) {
    cmd->add_option("--config", config_file, "run configuration file (key=value lines)");
    cmd->add_option("--preset", preset, "model preset: S, B, or L");
    cmd->add_option("--q", q, "query count");
    cmd->add_option("--d", d, "latent width");
    cmd->add_option("--depths", depths, "blocks per stage, e.g. 2,2,6,2");
    cmd->add_option("--experts", experts, "experts per mixture");
    cmd->add_option("--top-k", top_k, "experts routed per token");
    cmd->add_option("--mode", mode, "block composition: serial or parallel");
    cmd->add_option("--stages", stages, "enabled stages, e.g. 1,3 or all");
    cmd->add_option("--dense", dense, "true activates every expert");
    cmd->add_option("--num-classes", num_classes, "classifier output count");
    cmd->add_option("--init-std", init_std, "weight init standard deviation");
    cmd->add_option("--noise-std", noise_std, "routing noise standard deviation");
    cmd->add_option("--channels", channels, "pyramid channels, e.g. 96,192,384,768");
    cmd->add_option("--height", height, "input height (multiple of 32)");
    cmd->add_option("--width", width, "input width (multiple of 32)");
    cmd->add_option("--seed", seed, "weight init seed");
    cmd->add_option("--noise-seed", noise_seed, "routing noise seed");
    cmd->add_option("--precision", precision, "f32 or f64");
    if (with_files) {
      cmd->add_option("--cnn", cnn, "convolutional-branch feature file (HSQF)");
      cmd->add_option("--vit", vit, "transformer-branch feature file (HSQF)");
      cmd->add_option("--checkpoint", checkpoint, "model checkpoint to load (HSQW)");
      cmd->add_option("--out", out, "output file (default: stdout)");
    }
  }

  hsq::RunConfig resolve(hsq::RunConfig cfg = {}) const {
    if (!config_file.empty()) cfg = hsq::parse_run_config_file(config_file, std::move(cfg));
    const std::pair<const char*, const std::string*> entries[] = {
        {"preset", &preset},       {"q", &q},
        {"d", &d},                 {"depths", &depths},
        {"experts", &experts},     {"top_k", &top_k},
        {"mode", &mode},           {"stages", &stages},
        {"dense_moe", &dense},     {"num_classes", &num_classes},
        {"init_std", &init_std},   {"noise_std", &noise_std},
        {"channels", &channels},   {"height", &height},
        {"width", &width},         {"seed", &seed},
        {"noise_seed", &noise_seed}, {"precision", &precision},
        {"cnn", &cnn},             {"vit", &vit},
        {"checkpoint", &checkpoint}, {"out", &out},
    };
    for (const auto& [key, value] : entries) {
      if (!value->empty()) hsq::apply_run_config_entry(cfg, key, *value);
    }
    cfg.model.validate();
    return cfg;
  }
};

int cmd_synth(const RunFlags& flags, const std::string& cnn_out,
              const std::string& vit_out) {
  hsq::RunConfig cfg = flags.resolve();
  const auto counts = hsq::level_token_counts(cfg.height, cfg.width);
  const auto cnn =
      hsq::synth_pyramid<double>(cfg.height, cfg.width, cfg.channels,
                                 hsq::hash_combine(cfg.seed, 1));
  const auto vit =
      hsq::synth_pyramid<double>(cfg.height, cfg.width, cfg.channels,
                                 hsq::hash_combine(cfg.seed, 2));
  hsq::write_pyramid_file(cnn_out, cnn);
  hsq::write_pyramid_file(vit_out, vit);
  std::cout << "wrote " << cnn_out << " and " << vit_out << " (" << cfg.height << "x"
            << cfg.width << ", tokens";
  for (const std::size_t c : counts) std::cout << " " << c;
  std::cout << ")\n";
  return kExitOk;
}

template <typename T>
int run_forward(const hsq::RunConfig& cfg, const std::string& save_checkpoint) {
  if (cfg.cnn_path.empty() || cfg.vit_path.empty()) {
    throw hsq::ConfigError("forward needs --cnn and --vit feature files");
  }
  const auto cnn = hsq::read_pyramid_file<T>(cfg.cnn_path);
  const auto vit = hsq::read_pyramid_file<T>(cfg.vit_path);

  hsq::HsqModel<T> model;
  if (!cfg.checkpoint_path.empty()) {
    model = hsq::load_model_file<T>(cfg.checkpoint_path);
  } else {
    auto channels = cfg.channels;
    if (!cfg.channels_set) {
      for (std::size_t i = 0; i < hsq::kPyramidLevels; ++i) {
        channels[i] = cnn.levels[i].channels;
      }
    }
    model = hsq::build_model<T>(cfg.model, channels, cfg.seed);
  }
  if (model.config.num_classes != 2) {
    throw hsq::ConfigError("the forward report is binary: num_classes must be 2");
  }

  hsq::ForwardOptions fo;
  fo.noise_seed = cfg.noise_seed;
  const auto pred = hsq::classify(model, cnn, vit, fo);
  if (!save_checkpoint.empty()) hsq::save_model_file(save_checkpoint, model);

  // One row per enabled stage and expert; count is how many (token, slot)
  // routing assignments that stage sent to that expert, projector included.
  std::vector<std::vector<std::size_t>> counts(
      hsq::kPyramidLevels, std::vector<std::size_t>(model.config.experts, 0));
  for (const auto& rec : pred.records) {
    for (const std::size_t e : rec.decision.experts) ++counts[rec.stage][e];
  }
  const std::string id = file_stem(cfg.cnn_path);
  const std::string p0 = fmt("%.9f", static_cast<double>(pred.probabilities(0, 0)));
  const std::string p1 = fmt("%.9f", static_cast<double>(pred.probabilities(0, 1)));

  OutputTarget target(cfg.out_path);
  target.stream() << "input_id,p_benign,p_malignant,stage,expert,count\n";
  for (std::size_t i = 0; i < hsq::kPyramidLevels; ++i) {
    if (!model.config.enabled[i]) continue;
    for (std::size_t e = 0; e < model.config.experts; ++e) {
      target.stream() << id << ',' << p0 << ',' << p1 << ',' << i << ',' << e << ','
                      << counts[i][e] << "\n";
    }
  }
  target.finish();
  return kExitOk;
}

int cmd_forward(const RunFlags& flags, const std::string& save_checkpoint) {
  const hsq::RunConfig cfg = flags.resolve();
  return cfg.precision == "f32" ? run_forward<float>(cfg, save_checkpoint)
                                : run_forward<double>(cfg, save_checkpoint);
}

int cmd_gradcheck(const RunFlags& flags, double tolerance, double step,
                  bool fault_injection) {
  // Defaults: the micro model, small enough for a full finite-difference
  // sweep. A larger init keeps gradients well above the difference noise.
  hsq::RunConfig defaults;
  defaults.model.q = 4;
  defaults.model.d = 8;
  defaults.model.depths = {1, 1, 1, 1};
  defaults.model.experts = 2;
  defaults.model.top_k = 2;
  defaults.model.init_std = 0.5;
  defaults.channels = {4, 4, 4, 4};
  defaults.channels_set = true;
  defaults.height = 32;
  defaults.width = 32;
  const hsq::RunConfig cfg = flags.resolve(defaults);

  const auto model = hsq::build_model<double>(cfg.model, cfg.channels, cfg.seed);
  const auto cnn = hsq::synth_pyramid<double>(cfg.height, cfg.width, cfg.channels,
                                              hsq::hash_combine(cfg.seed, 1));
  const auto vit = hsq::synth_pyramid<double>(cfg.height, cfg.width, cfg.channels,
                                              hsq::hash_combine(cfg.seed, 2));
  hsq::ForwardOptions fo;
  fo.noise_seed = cfg.noise_seed;

  hsq::Tape<double> tape;
  hsq::Binder<double> rec(tape);
  const auto taped = hsq::model_forward(model, cnn, vit, rec, fo);
  tape.backward(hsq::sum_all(taped.logits));

  auto probe = model;
  std::vector<std::pair<std::string, hsq::Matrix<double>*>> slots;
  hsq::visit_params(probe, [&](const std::string& name, hsq::Matrix<double>& w) {
    slots.emplace_back(name, &w);
  });
  auto eval_loss = [&]() {
    hsq::Binder<double> ev;
    return hsq::sum_all(hsq::model_forward(probe, cnn, vit, ev, fo).logits).value()(0, 0);
  };

  if (fault_injection) {
    std::cout << "fault injection active: corrupting the first gradient entry\n";
  }
  double worst = 0;
  std::string worst_group;
  bool first_group = true;
  for (const auto& [name, w] : slots) {
    const auto bound = rec.bound().find(name);
    // A parameter the forward never touched (an expert no token chose) has a
    // zero gradient by definition.
    hsq::Matrix<double> analytic =
        bound != rec.bound().end()
            ? tape.grad(bound->second)
            : hsq::Matrix<double>(w->rows(), w->cols());
    if (fault_injection && first_group) analytic(0, 0) += 1.0;
    first_group = false;

    hsq::Matrix<double> numeric(w->rows(), w->cols());
    for (std::size_t i = 0; i < w->rows(); ++i) {
      for (std::size_t j = 0; j < w->cols(); ++j) {
        const double v = (*w)(i, j);
        (*w)(i, j) = v + step;
        const double up = eval_loss();
        (*w)(i, j) = v - step;
        const double down = eval_loss();
        (*w)(i, j) = v;
        numeric(i, j) = (up - down) / (2 * step);
      }
    }
    const double err = hsq::max_relative_error(analytic, numeric);
    const bool ok = err <= tolerance;
    std::cout << "group " << name << " max_rel_err=" << fmt("%.3e", err)
              << (ok ? " PASS" : " FAIL") << "\n";
    if (err > worst) {
      worst = err;
      worst_group = name;
    }
  }
  std::cout << "gradcheck: " << slots.size() << " groups, worst "
            << fmt("%.3e", worst) << " in " << worst_group << ", tolerance "
            << fmt("%.1e", tolerance) << "\n";
  return worst <= tolerance ? kExitOk : kExitTolerance;
}

int cmd_ablate(const std::string& axis_name, const RunFlags& flags, std::size_t reps) {
  hsq::RunConfig defaults;
  defaults.height = 64;
  defaults.width = 64;
  const hsq::RunConfig cfg = flags.resolve(defaults);
  const auto axis = hsq::ablation_axis_from_name(axis_name);
  const auto rows = hsq::run_ablation(axis, cfg.height, cfg.width, cfg.seed, reps);
  OutputTarget target(cfg.out_path);
  hsq::write_ablation_csv(target.stream(), rows);
  target.finish();
  return kExitOk;
}

template <typename T>
int run_bench(const hsq::RunConfig& cfg, std::size_t reps) {
  hsq::HsqModel<T> model;
  if (!cfg.checkpoint_path.empty()) {
    model = hsq::load_model_file<T>(cfg.checkpoint_path);
  } else {
    model = hsq::build_model<T>(cfg.model, cfg.channels, cfg.seed);
  }
  const auto cnn = hsq::synth_pyramid<T>(cfg.height, cfg.width, model.channels,
                                         hsq::hash_combine(cfg.seed, 1));
  const auto vit = hsq::synth_pyramid<T>(cfg.height, cfg.width, model.channels,
                                         hsq::hash_combine(cfg.seed, 2));
  hsq::ForwardOptions fo;
  fo.noise_seed = cfg.noise_seed;
  const auto r = hsq::bench_forward(model, cnn, vit, fo, reps);
  std::cout << "reps=" << r.reps << " median_ms=" << fmt("%.3f", r.median_ms)
            << " p95_ms=" << fmt("%.3f", r.p95_ms)
            << " throughput_per_s=" << fmt("%.3f", 1000.0 / r.median_ms) << "\n";
  return kExitOk;
}

int cmd_bench(const RunFlags& flags, std::size_t reps) {
  hsq::RunConfig defaults;
  defaults.height = 64;
  defaults.width = 64;
  const hsq::RunConfig cfg = flags.resolve(defaults);
  return cfg.precision == "f32" ? run_bench<float>(cfg, reps) : run_bench<double>(cfg, reps);
}

int cmd_eval(const std::string& scores_path, const std::string& group_rule,
             double threshold) {
  auto rows = hsq::read_scores_csv_file(scores_path);
  if (group_rule == "max") {
    rows = hsq::aggregate_by_group(rows, hsq::GroupRule::max_score);
  } else if (group_rule == "mean") {
    rows = hsq::aggregate_by_group(rows, hsq::GroupRule::mean_score);
  } else if (group_rule != "none") {
    throw hsq::ConfigError("group rule must be max, mean, or none, got '" +
                           group_rule + "'");
  }
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& row : rows) {
    scores.push_back(row.score);
    labels.push_back(row.label);
  }
  const double auc = hsq::rank_auc(scores, labels);
  const auto m = hsq::confusion_metrics(scores, labels, threshold);
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt("%.6f", *v) : std::string("na");
  };
  std::cout << "rows=" << rows.size() << " auc=" << fmt("%.6f", auc)
            << " accuracy=" << fmt("%.6f", m.accuracy) << " precision=" << opt(m.precision)
            << " recall=" << opt(m.recall) << " f1=" << opt(m.f1) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical sparse-query classifier toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker thread cap (0 keeps the default)");

  auto* synth = app.add_subcommand("synth", "write a synthetic feature-stack pair");
  RunFlags synth_flags;
  synth_flags.attach(synth, false);
  std::string cnn_out, vit_out;
  synth->add_option("--cnn-out", cnn_out, "output path for the first branch")->required();
  synth->add_option("--vit-out", vit_out, "output path for the second branch")->required();

  auto* forward = app.add_subcommand("forward", "classify one feature-stack pair");
  RunFlags forward_flags;
  forward_flags.attach(forward, true);
  std::string save_checkpoint;
  forward->add_option("--save-checkpoint", save_checkpoint,
                      "also write the model weights (HSQW)");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of every parameter group");
  RunFlags gradcheck_flags;
  gradcheck_flags.attach(gradcheck, false);
  double tolerance = 1e-4, step = 1e-5;
  bool fault_injection = false;
  gradcheck->add_option("--tolerance", tolerance, "max relative error allowed");
  gradcheck->add_option("--step", step, "finite-difference step");
  gradcheck->add_flag("--fault-injection", fault_injection,
                      "deliberately corrupt one gradient (checker self-test)");

  auto* ablate = app.add_subcommand("ablate", "sweep a configuration grid to CSV");
  RunFlags ablate_flags;
  ablate_flags.attach(ablate, false);
  std::string axis;
  std::size_t ablate_reps = 3;
  ablate->add_option("--axis", axis, "stage_scheme, stage_ratio, query, or moe")
      ->required();
  ablate->add_option("--reps", ablate_reps, "timed repetitions per grid point");
  std::string ablate_out;
  ablate->add_option("--out", ablate_out, "output CSV (default: stdout)");

  auto* bench = app.add_subcommand("bench", "time the forward pass");
  RunFlags bench_flags;
  bench_flags.attach(bench, false);
  std::string bench_checkpoint;
  bench->add_option("--checkpoint", bench_checkpoint, "model checkpoint to load (HSQW)");
  std::size_t bench_reps = 10;
  bench->add_option("--reps", bench_reps, "timed repetitions (at least 3)");

  auto* eval = app.add_subcommand("eval", "score a results table");
  std::string scores_path, group_rule = "max";
  double threshold = 0.5;
  eval->add_option("scores", scores_path, "scores CSV (id,group,score,label)")
      ->required();
  eval->add_option("--group-rule", group_rule,
                   "per-group aggregation: max, mean, or none");
  eval->add_option("--threshold", threshold, "decision threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (threads > 0) hsq::set_max_threads(threads);
    if (app.got_subcommand(synth)) return cmd_synth(synth_flags, cnn_out, vit_out);
    if (app.got_subcommand(forward)) return cmd_forward(forward_flags, save_checkpoint);
    if (app.got_subcommand(gradcheck)) {
      return cmd_gradcheck(gradcheck_flags, tolerance, step, fault_injection);
    }
    if (app.got_subcommand(ablate)) {
      ablate_flags.out = ablate_out;
      return cmd_ablate(axis, ablate_flags, ablate_reps);
    }
    if (app.got_subcommand(bench)) {
      bench_flags.checkpoint = bench_checkpoint;
      return cmd_bench(bench_flags, bench_reps);
    }
    if (app.got_subcommand(eval)) return cmd_eval(scores_path, group_rule, threshold);
  } catch (const hsq::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const hsq::IoError& e) {
    std::cerr << "i/o error (" << hsq::to_string(e.kind()) << "): " << e.what() << "\n";
    return kExitIo;
  } catch (const hsq::ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return kExitContract;
  }
  return kExitConfig;
}
