// Acceptance gate for the library. Each test is one release criterion and
// prints a single [ACCEPTANCE] verdict line, so the suite output doubles as
// the sign-off checklist. Tolerances and budgets are pinned here, not in a
// config file, so loosening one is a visible diff.

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hsq/hsq.hpp"
#include "test_support.hpp"

namespace hsq {
namespace {

class Acceptance : public testing::Test {
protected:
  void start(const std::string& label) {
    label_ = label;
    t0_ = std::chrono::steady_clock::now();
  }

  double elapsed_s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
        .count();
  }

  // Wall-clock ceilings are part of the contract: a criterion that passes by
  // grinding for an hour has failed.
  void expect_budget(double limit_s) { EXPECT_LT(elapsed_s(), limit_s) << label_; }

  void TearDown() override {
    char line[160];
    std::snprintf(line, sizeof line, "[ACCEPTANCE] %s: %s (%.1fs)", label_.c_str(),
                  HasFailure() ? "FAIL" : "PASS", elapsed_s());
    std::cout << line << std::endl;
  }

  std::string label_ = "unlabeled";
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

template <typename T>
void randomize(Matrix<T>& m, Rng& rng, T spread = T{1}) {
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data()[i] = spread * static_cast<T>(rng.next_normal());
  }
}

template <typename T>
void randomize_layer(MoeLayer<T>& layer, Rng& rng) {
  randomize(layer.gate_w, rng);
  for (auto& ex : layer.experts) {
    randomize(ex.w1, rng, T{0.5});
    randomize(ex.b1, rng, T{0.5});
    randomize(ex.w2, rng, T{0.5});
    randomize(ex.b2, rng, T{0.5});
  }
}

template <typename T>
void randomize_attention(AttentionParams<T>& p, Rng& rng) {
  randomize(p.wq, rng, T{0.5});
  randomize(p.wk, rng, T{0.5});
  randomize(p.wv, rng, T{0.5});
  randomize(p.wo, rng, T{0.5});
}

TEST_F(Acceptance, PresetFidelity) {
  start("C1 preset fidelity");

  const ModelConfig s = preset_s();
  EXPECT_EQ(s.q, 200u);
  EXPECT_EQ(s.d, 384u);
  EXPECT_EQ(s.depths, (std::array<std::size_t, 4>{1, 1, 1, 1}));
  EXPECT_EQ(s.experts, 4u);
  EXPECT_EQ(s.top_k, 1u);

  const ModelConfig b = preset_b();
  EXPECT_EQ(b.q, 200u);
  EXPECT_EQ(b.d, 384u);
  EXPECT_EQ(b.depths, (std::array<std::size_t, 4>{2, 2, 6, 2}));
  EXPECT_EQ(b.experts, 4u);
  EXPECT_EQ(b.top_k, 2u);

  const ModelConfig l = preset_l();
  EXPECT_EQ(l.q, 400u);
  EXPECT_EQ(l.d, 768u);
  EXPECT_EQ(l.depths, (std::array<std::size_t, 4>{2, 2, 6, 2}));
  EXPECT_EQ(l.experts, 8u);
  EXPECT_EQ(l.top_k, 2u);

  for (const ModelConfig& cfg : {s, b, l}) {
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.num_classes, 2u);
  }
  expect_budget(1.0);
}

TEST_F(Acceptance, PyramidGeometry) {
  start("C2 pyramid geometry");

  const auto counts = level_token_counts(224, 224);
  EXPECT_EQ(counts[0], 3136u);
  EXPECT_EQ(counts[1], 784u);
  EXPECT_EQ(counts[2], 196u);
  EXPECT_EQ(counts[3], 49u);

  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = 32 * (1 + rng.next_u64() % 20);
    const std::size_t w = 32 * (1 + rng.next_u64() % 20);
    const auto c = level_token_counts(h, w);
    for (std::size_t i = 0; i < kPyramidLevels; ++i) {
      const std::size_t stride = kPyramidStrides[i];
      EXPECT_EQ(c[i], (h / stride) * (w / stride));
    }
  }
  EXPECT_THROW(level_token_counts(100, 224), ConfigError);
  expect_budget(1.0);
}

TEST_F(Acceptance, RoutingInvariants) {
  start("C3 routing invariants");

  const std::size_t n = 1000, d = 16;
  Rng rng(11);
  Matrix<double> x(n, d);
  randomize(x, rng);

  for (const std::size_t e : {std::size_t{2}, std::size_t{4}, std::size_t{8}}) {
    MoeLayer<double> layer = MoeLayer<double>::make(d, e, 1);
    randomize(layer.gate_w, rng);
    layer.noise_std = 0.3;

    const std::set<std::size_t> ks = {1, 2, e};
    for (const std::size_t k : ks) {
      RouteOptions opt;
      opt.noise_seed = 5;
      opt.layer_tag = hash_combine(99, e);

      set_max_threads(1);
      const RouterDecision<double> one = route(x, layer, k, opt);
      set_max_threads(8);
      const RouterDecision<double> eight = route(x, layer, k, opt);
      set_max_threads(1);

      ASSERT_EQ(one.gates.rows(), n);
      ASSERT_EQ(one.gates.cols(), k);
      for (std::size_t i = 0; i < n; ++i) {
        std::set<std::size_t> chosen;
        double sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t ex = one.expert_at(i, j);
          EXPECT_LT(ex, e);
          chosen.insert(ex);
          EXPECT_GE(one.gates(i, j), 0.0);
          sum += one.gates(i, j);
        }
        EXPECT_EQ(chosen.size(), k);  // k distinct experts, no repeats
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
      EXPECT_EQ(one.experts, eight.experts);
      hsqtest::expect_matrix_eq(one.gates, eight.gates);
    }
  }
  expect_budget(10.0);
}

TEST_F(Acceptance, SparseDenseAgreement) {
  start("C4 sparse-dense agreement");

  const std::size_t expert_pool[] = {2, 3, 4, 8};
  Rng rng(23);

  // Full activation: with k = E the sparse path must reproduce the dense
  // reference, which never touches the routing machinery.
  for (int t = 0; t < 100; ++t) {
    const std::size_t nn = 1 + rng.next_u64() % 12;
    const std::size_t dd = 2 + rng.next_u64() % 11;
    const std::size_t e = expert_pool[rng.next_u64() % 4];
    MoeLayer<double> layer = MoeLayer<double>::make(dd, e, e);
    randomize_layer(layer, rng);
    layer.noise_std = (t % 2 == 0) ? 0.3 : 0.0;
    Matrix<double> x(nn, dd);
    randomize(x, rng);
    RouteOptions opt;
    opt.noise_seed = 77;
    opt.layer_tag = static_cast<std::uint64_t>(t);

    Binder<double> eval;
    const Matrix<double> sparse =
        moe_forward(constant_ref(x), layer, eval, "moe", opt).out.value();
    const Matrix<double> dense = dense_moe_forward(x, layer, opt);
    EXPECT_LE(max_abs_diff(sparse, dense), 1e-10);
  }

  // Partial activation: scattering the sparse gates into a dense mask and
  // running every expert must agree with the sparse evaluation.
  for (int t = 0; t < 100; ++t) {
    const std::size_t nn = 1 + rng.next_u64() % 12;
    const std::size_t dd = 2 + rng.next_u64() % 11;
    const std::size_t e = expert_pool[rng.next_u64() % 4];
    const std::size_t k = 1 + rng.next_u64() % (e - 1);
    MoeLayer<double> layer = MoeLayer<double>::make(dd, e, k);
    randomize_layer(layer, rng);
    layer.noise_std = (t % 2 == 0) ? 0.3 : 0.0;
    Matrix<double> x(nn, dd);
    randomize(x, rng);
    RouteOptions opt;
    opt.noise_seed = 78;
    opt.layer_tag = static_cast<std::uint64_t>(t);

    Binder<double> eval;
    const MoeOutput<double> sparse = moe_forward(constant_ref(x), layer, eval, "moe", opt);
    Matrix<double> mask(nn, e);
    for (std::size_t i = 0; i < nn; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        mask(i, sparse.decision.expert_at(i, j)) = sparse.decision.gates(i, j);
      }
    }
    const Matrix<double> dense = dense_moe_forward(x, layer, mask);
    EXPECT_LE(max_abs_diff(sparse.out.value(), dense), 1e-10);
  }
  expect_budget(10.0);
}

TEST_F(Acceptance, GradientFidelity) {
  start("C5 gradient fidelity");

  const double step = 1e-5;
  const double tolerance = 1e-4;

  // Micro configuration: small enough for a full finite-difference sweep of
  // every parameter, with top_k = experts so every group is reached.
  ModelConfig cfg;
  cfg.q = 4;
  cfg.d = 8;
  cfg.depths = {1, 1, 1, 1};
  cfg.experts = 2;
  cfg.top_k = 2;
  cfg.init_std = 0.5;
  const std::array<std::size_t, kPyramidLevels> channels = {4, 4, 4, 4};

  const auto model = build_model<double>(cfg, channels, 17);
  const auto cnn = synth_pyramid<double>(32, 32, channels, hash_combine(17, 1));
  const auto vit = synth_pyramid<double>(32, 32, channels, hash_combine(17, 2));

  // End to end: analytic gradient of the summed logits against central
  // differences, for every parameter group of the whole model.
  Tape<double> tape;
  Binder<double> rec(tape);
  const auto taped = model_forward(model, cnn, vit, rec);
  tape.backward(sum_all(taped.logits));

  auto probe = model;
  std::vector<std::pair<std::string, Matrix<double>*>> slots;
  visit_params(probe, [&](const std::string& name, Matrix<double>& w) {
    slots.emplace_back(name, &w);
  });
  auto loss = [&]() {
    Binder<double> ev;
    return sum_all(model_forward(probe, cnn, vit, ev).logits).value()(0, 0);
  };
  double worst = 0;
  for (const auto& [name, w] : slots) {
    const auto bound = rec.bound().find(name);
    ASSERT_NE(bound, rec.bound().end()) << name;
    const Matrix<double> analytic = tape.grad(bound->second);
    Matrix<double> numeric(w->rows(), w->cols());
    for (std::size_t i = 0; i < w->size(); ++i) {
      const double v = w->data()[i];
      w->data()[i] = v + step;
      const double up = loss();
      w->data()[i] = v - step;
      const double down = loss();
      w->data()[i] = v;
      numeric.data()[i] = (up - down) / (2 * step);
    }
    const double err = max_relative_error(analytic, numeric);
    EXPECT_LT(err, tolerance) << name;
    worst = std::max(worst, err);
  }
  std::cout << "  end-to-end: " << slots.size() << " groups, worst rel err " << worst
            << "\n";

  // In isolation: every mixing block of the model, fed its own random inputs,
  // checked over all of its parameters.
  std::vector<std::pair<std::string, const CsmBlock<double>*>> blocks;
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    blocks.emplace_back("proj" + std::to_string(i) + ".fwd",
                        &model.projectors[i]->pair.fwd);
    blocks.emplace_back("proj" + std::to_string(i) + ".rev",
                        &model.projectors[i]->pair.rev);
    for (std::size_t j = 0; j < model.stages[i].size(); ++j) {
      blocks.emplace_back("stage" + std::to_string(i) + ".block" + std::to_string(j),
                          &model.stages[i][j]);
    }
  }
  ASSERT_EQ(blocks.size(), 12u);

  Rng rng(29);
  double worst_block = 0;
  for (const auto& [label, block] : blocks) {
    Matrix<double> src(4, cfg.d), tgt(6, cfg.d);
    randomize(src, rng);
    randomize(tgt, rng);

    Tape<double> bt;
    Binder<double> brec(bt);
    const auto out = csm_forward(*block, constant_ref(src), constant_ref(tgt), brec, "b");
    bt.backward(sum_all(out.out));

    CsmBlock<double> copy = *block;
    std::vector<std::pair<std::string, Matrix<double>*>> bslots;
    detail::visit_csm_params("b", copy, [&](const std::string& name, Matrix<double>& w) {
      bslots.emplace_back(name, &w);
    });
    auto block_loss = [&]() {
      Binder<double> ev;
      return sum_all(csm_forward(copy, constant_ref(src), constant_ref(tgt), ev, "b").out)
          .value()(0, 0);
    };
    for (const auto& [name, w] : bslots) {
      const auto bound = brec.bound().find(name);
      ASSERT_NE(bound, brec.bound().end()) << label << " " << name;
      const Matrix<double> analytic = bt.grad(bound->second);
      Matrix<double> numeric(w->rows(), w->cols());
      for (std::size_t i = 0; i < w->size(); ++i) {
        const double v = w->data()[i];
        w->data()[i] = v + step;
        const double up = block_loss();
        w->data()[i] = v - step;
        const double down = block_loss();
        w->data()[i] = v;
        numeric.data()[i] = (up - down) / (2 * step);
      }
      const double err = max_relative_error(analytic, numeric);
      EXPECT_LT(err, tolerance) << label << " " << name;
      worst_block = std::max(worst_block, err);
    }
  }
  std::cout << "  isolated: " << blocks.size() << " blocks, worst rel err "
            << worst_block << "\n";
  expect_budget(60.0);
}

TEST_F(Acceptance, AttentionProperties) {
  start("C6 attention properties");

  const std::size_t widths[] = {8, 16, 32, 64, 128};
  Rng rng(31);
  std::mt19937 shuffler(31);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = widths[rng.next_u64() % 5];
    const std::size_t n = 1 + rng.next_u64() % 10;
    const std::size_t m = 1 + rng.next_u64() % 10;
    AttentionParams<double> p = AttentionParams<double>::make(d);
    randomize_attention(p, rng);
    Matrix<double> x(n, d), y(m, d);
    randomize(x, rng);
    randomize(y, rng);

    // Attention weights are a distribution over target tokens, per head.
    Binder<double> ev;
    std::vector<Matrix<double>> weights;
    cross_attention(constant_ref(x), constant_ref(y), p, ev, "a", &weights);
    ASSERT_EQ(weights.size(), p.heads);
    for (const auto& head : weights) {
      ASSERT_EQ(head.rows(), n);
      ASSERT_EQ(head.cols(), m);
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < m; ++j) {
          EXPECT_GE(head(i, j), 0.0);
          sum += head(i, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }

    // Reordering the token set permutes self-attention output by exactly the
    // same permutation, to the bit.
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), shuffler);
    Matrix<double> xp(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) xp(i, j) = x(perm[i], j);
    }
    Binder<double> e1, e2, e3;
    const Matrix<double> sa = self_attention(constant_ref(x), p, e1, "s").value();
    const Matrix<double> sap = self_attention(constant_ref(xp), p, e2, "s").value();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        ASSERT_EQ(sap(i, j), sa(perm[i], j));
      }
    }

    // Cross attention degenerates to self attention when both sides coincide.
    const Matrix<double> ca =
        cross_attention(constant_ref(x), constant_ref(x), p, e3, "s").value();
    hsqtest::expect_matrix_eq(ca, sa);
  }
  expect_budget(5.0);
}

TEST_F(Acceptance, ResidualIdentity) {
  start("C7 residual identity");

  Rng rng(37);
  for (const CsmMode mode : {CsmMode::serial, CsmMode::parallel}) {
    CsmBlock<double> block = CsmBlock<double>::make(8, 3, 2, mode);
    randomize_attention(block.cross, rng);
    randomize_attention(block.self_at, rng);
    randomize(block.n1.gain, rng);
    randomize(block.n1.bias, rng);
    randomize(block.n2.gain, rng);
    randomize(block.n2.bias, rng);
    randomize(block.n3.gain, rng);
    randomize(block.n3.bias, rng);
    randomize_layer(block.moe, rng);
    // Silence every sublayer at its final projection; the residual stream
    // must then pass through untouched.
    block.cross.wo.fill(0);
    block.self_at.wo.fill(0);
    for (auto& ex : block.moe.experts) {
      ex.w2.fill(0);
      ex.b2.fill(0);
    }

    const std::pair<std::size_t, std::size_t> shapes[] = {{4, 6}, {1, 1}, {5, 2}};
    for (const auto [n, m] : shapes) {
      Matrix<double> src(n, 8), tgt(m, 8);
      randomize(src, rng);
      randomize(tgt, rng);
      Binder<double> ev;
      const Matrix<double> out =
          csm_forward(block, constant_ref(src), constant_ref(tgt), ev, "b").out.value();
      hsqtest::expect_matrix_eq(out, src);
    }
  }
  expect_budget(1.0);
}

TEST_F(Acceptance, CapacityOrdering) {
  start("C8 capacity ordering");

  // Constructed models agree with the closed-form count at S and B scale; L
  // is checked in closed form only (it would not fit in memory here twice).
  const auto s = detail::allocate_model<double>(preset_s(), kDefaultChannels);
  EXPECT_EQ(param_count(s), config_param_count(preset_s()));
  const std::size_t count_s = config_param_count(preset_s());
  {
    const auto b = detail::allocate_model<double>(preset_b(), kDefaultChannels);
    EXPECT_EQ(param_count(b), config_param_count(preset_b()));
  }
  const std::size_t count_b = config_param_count(preset_b());
  const std::size_t count_l = config_param_count(preset_l());
  EXPECT_LT(count_s, count_b);
  EXPECT_LT(count_b, count_l);

  // Dense evaluation is a routing decision, not an architecture change.
  for (ModelConfig cfg : {preset_s(), preset_b(), preset_l()}) {
    const std::size_t sparse_count = config_param_count(cfg);
    cfg.dense_moe = true;
    EXPECT_EQ(config_param_count(cfg), sparse_count);
  }
  ModelConfig s_dense = preset_s();
  s_dense.dense_moe = true;
  const auto sd = detail::allocate_model<double>(s_dense, kDefaultChannels);
  EXPECT_EQ(param_count(sd), count_s);
  expect_budget(5.0);
}

// Counts concordant pairs directly, half credit for ties. Quadratic and
// obviously correct, which is the point.
double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

TEST_F(Acceptance, RankingOracle) {
  start("C9 ranking oracle");

  EXPECT_EQ(rank_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0);
  EXPECT_EQ(rank_auc({0.1, 0.2, 0.8, 0.9}, {1, 1, 0, 0}), 0.0);
  EXPECT_EQ(rank_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}), 0.5);

  Rng rng(41);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.next_u64() % 199;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Quantized scores so ties actually happen.
      scores[i] = std::floor(rng.next_normal() * 4.0) / 4.0;
      labels[i] = static_cast<int>(rng.next_u64() % 2);
    }
    labels[0] = 1;  // guarantee both classes
    labels[n - 1] = 0;
    EXPECT_EQ(rank_auc(scores, labels), pairwise_auc(scores, labels)) << "trial " << t;
  }
  expect_budget(5.0);
}

TEST_F(Acceptance, AblationGridViability) {
  start("C10 ablation grids");

  const struct {
    AblationAxis axis;
    std::size_t points;
  } grids[] = {
      {AblationAxis::stage_ratio, 5},
      {AblationAxis::query, 20},
      {AblationAxis::moe, 10},
  };
  for (const auto& g : grids) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<AblationRow> rows = run_ablation(g.axis, 64, 64, 3, 3);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ASSERT_EQ(rows.size(), g.points) << ablation_axis_name(g.axis);
    for (const AblationRow& row : rows) {
      EXPECT_GT(row.params, 0u) << row.label;
      EXPECT_GT(row.median_ms, 0.0) << row.label;
      EXPECT_GE(row.p95_ms, row.median_ms) << row.label;
    }
    std::ostringstream csv;
    write_ablation_csv(csv, rows);
    const std::string text = csv.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'),
              static_cast<std::ptrdiff_t>(g.points + 1));
    std::cout << "  " << ablation_axis_name(g.axis) << ": " << rows.size()
              << " points in " << secs << "s\n";
    EXPECT_LT(secs, 600.0) << ablation_axis_name(g.axis);
  }
}

TEST_F(Acceptance, SerializationIntegrity) {
  start("C11 serialization integrity");

  // Feature stacks: write, read, write again, compare bytes and values.
  const std::array<std::size_t, kPyramidLevels> ch = {8, 8, 8, 8};
  const auto pyr = synth_pyramid<double>(64, 64, ch, 5);
  std::ostringstream p1;
  write_pyramid(p1, pyr);
  std::istringstream pin(p1.str());
  const auto pyr2 = read_pyramid<double>(pin, "mem");
  std::ostringstream p2;
  write_pyramid(p2, pyr2);
  EXPECT_EQ(p1.str(), p2.str());
  for (std::size_t i = 0; i < kPyramidLevels; ++i) {
    hsqtest::expect_matrix_eq(pyr2.levels[i].tokens, pyr.levels[i].tokens);
  }

  // Checkpoints: same double round trip, and identical predictions after.
  ModelConfig cfg;
  cfg.q = 3;
  cfg.d = 8;
  cfg.experts = 2;
  cfg.top_k = 1;
  const std::array<std::size_t, kPyramidLevels> mch = {4, 4, 4, 4};
  const auto model = build_model<double>(cfg, mch, 9);
  std::ostringstream m1;
  save_model(m1, model);
  std::istringstream min(m1.str());
  const auto model2 = load_model<double>(min, "mem");
  std::ostringstream m2;
  save_model(m2, model2);
  EXPECT_EQ(m1.str(), m2.str());

  const auto cnn = synth_pyramid<double>(32, 32, mch, 1);
  const auto vit = synth_pyramid<double>(32, 32, mch, 2);
  hsqtest::expect_matrix_eq(classify(model2, cnn, vit).probabilities,
                            classify(model, cnn, vit).probabilities);

  // Damaged bytes land in their designated error classes.
  const auto pyramid_kind = [](std::string bytes) {
    std::istringstream is(bytes);
    try {
      read_pyramid<double>(is, "mem");
    } catch (const IoError& e) {
      return e.kind();
    }
    return IoErrorKind::file_access;  // not reached for damaged input
  };
  const auto model_kind = [](std::string bytes) {
    std::istringstream is(bytes);
    try {
      load_model<double>(is, "mem");
    } catch (const IoError& e) {
      return e.kind();
    }
    return IoErrorKind::file_access;
  };

  std::string good = p1.str();
  std::string damaged = good;
  damaged[0] = 'X';
  EXPECT_EQ(pyramid_kind(damaged), IoErrorKind::bad_magic);
  damaged = good;
  damaged[4] = 99;
  EXPECT_EQ(pyramid_kind(damaged), IoErrorKind::bad_version);
  damaged = good;
  damaged[8] = 33;  // height no longer divisible by the coarsest stride
  EXPECT_EQ(pyramid_kind(damaged), IoErrorKind::geometry);
  EXPECT_EQ(pyramid_kind(good.substr(0, good.size() - 7)), IoErrorKind::truncated);
  damaged = good;
  damaged.push_back('\0');
  EXPECT_EQ(pyramid_kind(damaged), IoErrorKind::malformed);

  good = m1.str();
  damaged = good;
  damaged[0] = 'X';
  EXPECT_EQ(model_kind(damaged), IoErrorKind::bad_magic);
  damaged = good;
  damaged[4] = 99;
  EXPECT_EQ(model_kind(damaged), IoErrorKind::bad_version);
  EXPECT_EQ(model_kind(good.substr(0, good.size() - 7)), IoErrorKind::truncated);
  damaged = good;
  damaged.push_back('\0');
  EXPECT_EQ(model_kind(damaged), IoErrorKind::malformed);
  expect_budget(5.0);
}

TEST_F(Acceptance, SparseRoutingDividend) {
  start("C12 sparse routing dividend");

  // The largest preset, where conditional computation should pay: the same
  // built model, timed with its native top-2 routing and with every expert
  // forced on. Direction is the contract; absolute times are not.
  const ModelConfig cfg = preset_l();
  const auto model = build_model<float>(cfg, kDefaultChannels, 2026);
  const auto cnn = synth_pyramid<float>(32, 32, kDefaultChannels, hash_combine(2026, 1));
  const auto vit = synth_pyramid<float>(32, 32, kDefaultChannels, hash_combine(2026, 2));

  ForwardOptions sparse;
  sparse.dense_override = false;
  ForwardOptions dense;
  dense.dense_override = true;

  const BenchResult rs = bench_forward(model, cnn, vit, sparse, 20);
  const BenchResult rd = bench_forward(model, cnn, vit, dense, 20);
  std::cout << "  sparse median " << rs.median_ms << "ms, dense median " << rd.median_ms
            << "ms over " << rs.reps << " reps\n";
  EXPECT_LT(rs.median_ms, rd.median_ms);
}

}  // namespace
}  // namespace hsq
