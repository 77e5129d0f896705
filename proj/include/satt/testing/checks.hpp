#pragma once

// The acceptance criteria as runnable checks, shared by the acceptance test
// binary and the `selftest` subcommand. Every check is deterministic.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "satt/accounting.hpp"
#include "satt/attention.hpp"
#include "satt/grad/gradcheck.hpp"
#include "satt/ops.hpp"
#include "satt/rng.hpp"
#include "satt/testing/reference.hpp"
#include "satt/toy/train.hpp"

namespace satt::testing {

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

inline std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

inline constexpr std::uint64_t kCheckSeed = 20200130;

// 1. count(SaParams) == 3C/G.
inline CheckResult check_param_identity() {
  CheckResult r{1, "parameter identity 3C/G", false, {}, 0.0};
  r.pass = true;
  const std::pair<std::size_t, std::size_t> cases[] = {{256, 64}, {512, 64}, {1024, 64}, {2048, 64}, {16, 8}};
  for (auto [C, G] : cases) {
    const std::size_t want = 3 * C / G;
    const std::size_t got = SaParams<float>::init(C, G).count();
    SaConfig cfg;
    cfg.groups = G;
    const std::size_t formula = accounting::sa_params(C, cfg);
    r.pass = r.pass && got == want && formula == want;
    r.detail += format("C=%zu,G=%zu: %zu/%zu ", C, G, got, want);
  }
  return r;
}

// 2. Added parameters on ResNet-50: SA < 1,000; SE(r=16) within 5% of 2.531M.
inline CheckResult check_table1_params() {
  CheckResult r{2, "ResNet-50 parameter deltas", false, {}, 0.0};
  const auto model = accounting::ModelDescriptor::resnet50();
  const auto sa = accounting::report(model, accounting::AttentionSpec::parse("sa:64"));
  const auto se = accounting::report(model, accounting::AttentionSpec::parse("se:16"));
  auto se_bias_spec = accounting::AttentionSpec::parse("se:16");
  se_bias_spec.se_bias = true;
  const auto se_bias = accounting::report(model, se_bias_spec);
  const double published_se = 2.531e6;
  const double rel = std::abs(static_cast<double>(se.params_added) - published_se) / published_se;
  r.pass = sa.params_added < 1000 && rel <= 0.05;
  r.detail = format("SA +%llu (<1000), SE r16 +%llu (%.2f%% off 2.531M; with biases +%llu)",
                    static_cast<unsigned long long>(sa.params_added),
                    static_cast<unsigned long long>(se.params_added), 100.0 * rel,
                    static_cast<unsigned long long>(se_bias.params_added));
  return r;
}

// 3. Added GFLOPs of SA on ResNet-50 at 224x224, G=64, in [1.4e-3, 5.6e-3].
inline CheckResult check_flops_claim() {
  CheckResult r{3, "ResNet-50 SA GFLOPs band", false, {}, 0.0};
  const auto rep = accounting::report(accounting::ModelDescriptor::resnet50(),
                                      accounting::AttentionSpec::parse("sa:64"));
  const double hook = static_cast<double>(rep.flops_added_hook) * 1e-9;
  const double exact = static_cast<double>(rep.flops_added_exact) * 1e-9;
  r.pass = hook >= 1.4e-3 && hook <= 5.6e-3;
  r.detail = format("layer-hook %.4e GFLOPs in [1.4e-3, 5.6e-3]; every-scalar-op count %.4e", hook, exact);
  return r;
}

// 4. Tape gradients vs central differences.
inline CheckResult check_gradients(double tol = 1e-4) {
  CheckResult r{4, "gradient certification", false, {}, 0.0};
  struct Case {
    Shape4 shape;
    std::size_t groups;
  };
  const Case cases[] = {{{1, 8, 3, 3}, 2}, {{2, 16, 4, 4}, 4}, {{1, 64, 2, 2}, 8}};
  r.pass = true;
  double worst = 0.0;
  int runs = 0;
  for (const auto& c : cases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SaConfig cfg;
      cfg.groups = c.groups;
      const auto rep = grad::check_sa_gradients(c.shape, cfg, kCheckSeed + seed, tol);
      worst = std::max(worst, rep.worst_rel());
      r.pass = r.pass && rep.pass;
      ++runs;
    }
  }
  r.detail = format("%d runs, worst relative error %.3e (tol %.0e)", runs, worst, tol);
  return r;
}

// 5. Default initialisation gives sigmoid(1) * shuffle(x), or sigmoid(1) * x without shuffle.
inline CheckResult check_init_transparency() {
  CheckResult r{5, "init transparency", false, {}, 0.0};
  const double s1 = 1.0 / (1.0 + std::exp(-1.0));
  Rng rng = Rng(kCheckSeed).split(5);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const std::size_t G = 1 + rng.below(4);
    const std::size_t C = 2 * G * (1 + rng.below(4));
    const Shape4 shape{1 + rng.below(2), C, 1 + rng.below(6), 1 + rng.below(6)};
    const Tensor4f x = random_normal<float>(shape, rng, 0.0, 2.0);
    SaConfig cfg;
    cfg.groups = G;
    const auto p = SaParams<float>::init(C, G);
    const Tensor4f y = sa_forward(x, p, cfg);
    cfg.enable_shuffle = false;
    const Tensor4f y_plain = sa_forward(x, p, cfg);
    // Output channel s*2 + r reads input channel r*(C/2) + s.
    for (std::size_t n = 0; n < shape.n; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t src = (c % 2) * (C / 2) + c / 2;
        for (std::size_t i2 = 0; i2 < shape.spatial(); ++i2) {
          const double xs = x.plane(n, src)[i2];
          const double xc = x.plane(n, c)[i2];
          worst = std::max(worst, std::abs(y.plane(n, c)[i2] - s1 * xs));
          worst = std::max(worst, std::abs(y_plain.plane(n, c)[i2] - s1 * xc));
        }
      }
    }
  }
  r.pass = worst <= 1e-6;
  r.detail = format("max |y - sigmoid(1)*shuffle(x)| = %.3e over 10 inputs, shuffle on and off", worst);
  return r;
}

// 6. Shuffle permutation, inverse, split/concat round trip, shapes, group locality.
inline CheckResult check_structure() {
  CheckResult r{6, "structural invariants", false, {}, 0.0};
  Rng rng = Rng(kCheckSeed).split(6);
  bool perm_ok = true, inverse_ok = true, roundtrip_ok = true, shape_ok = true, local_ok = true;
  for (int i = 0; i < 20; ++i) {
    const std::size_t G = 1 + rng.below(4);
    const std::size_t C = 2 * G * (1 + rng.below(3));
    const Shape4 shape{1 + rng.below(2), C, 1 + rng.below(4), 1 + rng.below(4)};
    const Tensor4f x = random_normal<float>(shape, rng);
    const std::size_t g = C % 4 == 0 ? 4 : 2;
    const Tensor4f s = channel_shuffle(x, g);
    std::vector<bool> seen(C, false);
    for (std::size_t oc = 0; oc < C; ++oc) {
      bool matched = false;
      for (std::size_t ic = 0; ic < C && !matched; ++ic) {
        if (seen[ic]) continue;
        bool same = true;
        for (std::size_t n = 0; n < shape.n && same; ++n) {
          const auto a = s.plane(n, oc);
          const auto b = x.plane(n, ic);
          same = std::equal(a.begin(), a.end(), b.begin());
        }
        if (same) seen[ic] = matched = true;
      }
      perm_ok = perm_ok && matched;
    }
    inverse_ok = inverse_ok && bit_equal(channel_unshuffle(s, g), x) && bit_equal(channel_shuffle(channel_unshuffle(x, g), g), x);
    roundtrip_ok = roundtrip_ok && bit_equal(concat_channels(split_channels(x, G)), x);

    SaConfig cfg;
    cfg.groups = G;
    Rng prng = rng.split(static_cast<std::uint64_t>(i));
    const auto p = grad::random_sa_params<float>(C, G, FcVariant::affine, prng);
    shape_ok = shape_ok && sa_forward(x, p, cfg).shape() == shape;

    // Perturb one group; with shuffle off only that group's outputs move.
    cfg.enable_shuffle = false;
    const std::size_t per = C / G;
    const std::size_t target = rng.below(G);
    Tensor4f xp = x;
    for (std::size_t n = 0; n < shape.n; ++n) {
      for (std::size_t c = target * per; c < (target + 1) * per; ++c) {
        for (auto& v : xp.plane(n, c)) v += 1.0f;
      }
    }
    const Tensor4f y0 = sa_forward(x, p, cfg);
    const Tensor4f y1 = sa_forward(xp, p, cfg);
    for (std::size_t n = 0; n < shape.n; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        if (c / per == target) continue;
        const auto a = y0.plane(n, c);
        const auto b = y1.plane(n, c);
        local_ok = local_ok && std::equal(a.begin(), a.end(), b.begin());
      }
    }
  }
  r.pass = perm_ok && inverse_ok && roundtrip_ok && shape_ok && local_ok;
  r.detail = format("permutation %s, inverse %s, split/concat %s, shape %s, group locality %s (20 configs)",
                    perm_ok ? "ok" : "FAIL", inverse_ok ? "ok" : "FAIL", roundtrip_ok ? "ok" : "FAIL",
                    shape_ok ? "ok" : "FAIL", local_ok ? "ok" : "FAIL");
  return r;
}

// 7. Optimised forward vs the scalar-loop reference.
inline CheckResult check_oracle() {
  CheckResult r{7, "oracle equivalence", false, {}, 0.0};
  Rng rng = Rng(kCheckSeed).split(7);
  double worst = 0.0;
  bool minimal_seen = false;
  for (int i = 0; i < 10; ++i) {
    const std::size_t G = 1 + rng.below(4);
    const std::size_t k = i < 3 ? 1 : 1 + rng.below(3);
    const std::size_t C = 2 * G * k;
    minimal_seen = minimal_seen || k == 1;
    const Shape4 shape{1 + rng.below(2), C, 1 + rng.below(5), 1 + rng.below(5)};
    SaConfig cfg = SaConfig::variant(kAblationVariants[static_cast<std::size_t>(i) % 5], G);
    const Tensor4f x = random_normal<float>(shape, rng);
    Rng prng = rng.split(static_cast<std::uint64_t>(i));
    const auto p = grad::random_sa_params<float>(C, G, cfg.fc_variant, prng);
    const Tensor4f y = sa_forward(x, p, cfg);
    const Tensor4d want = ref_sa_forward(Tensor4d::cast(x), p.template cast<double>(), cfg);
    worst = std::max(worst, max_abs_diff(y, want));
  }
  r.pass = worst <= 1e-5 && minimal_seen;
  r.detail = format("max abs error %.3e over 10 fixtures (all variants, C/2G=1 included)", worst);
  return r;
}

struct ToyBench {
  toy::SyntheticDataset data{};
  toy::TrainConfig train{};
  toy::ToyNetConfig net{};

  ToyBench() {
    data.seed = kCheckSeed;
    train.seed = kCheckSeed;
  }
};

// 8. Ablation variants train without non-finite loss, SA keeps up with the
// baseline, and a rerun replays bit-exactly.
inline CheckResult check_toy_training(const ToyBench& bench = {}, std::string* table = nullptr) {
  CheckResult r{8, "toy ablation harness", false, {}, 0.0};
  std::vector<toy::AblationRow> rows;
  try {
    rows = toy::run_ablation(bench.net, bench.data, bench.train);
  } catch (const NumericError& e) {
    r.detail = e.what();
    return r;
  }
  double base = 0.0, origin = 0.0;
  bool finite = true;
  std::string summary;
  for (const auto& row : rows) {
    for (const auto& e : row.history.epochs) finite = finite && std::isfinite(e.loss);
    const double acc = row.history.epochs.back().val_acc;
    if (row.name == "baseline") base = acc;
    if (row.name == "origin") origin = acc;
    summary += format("%s %.3f ", row.name.c_str(), acc);
    if (table) {
      *table += format("%-10s params %7zu  final loss %.4f  train %.3f  val %.3f\n", row.name.c_str(), row.params,
                       row.history.epochs.back().loss, row.history.epochs.back().train_acc, acc);
    }
  }
  toy::ToyNetConfig origin_cfg = bench.net;
  origin_cfg.attention = toy::Attention::sa;
  origin_cfg.sa_variant = "origin";
  toy::ToyNet replay = toy::build(origin_cfg, Rng(bench.train.seed));
  const toy::History again = toy::train(replay, bench.data, bench.train);
  const bool replay_ok = again.identical(rows[1].history);
  r.pass = finite && origin >= base - 0.05 && replay_ok;
  r.detail = format("val acc: %sreplay %s", summary.c_str(), replay_ok ? "bit-exact" : "DIFFERS");
  return r;
}

// 9. Symbolic FLOP formula == instrumented count.
inline CheckResult check_flop_formula() {
  CheckResult r{9, "FLOP formula vs counter", false, {}, 0.0};
  Rng rng = Rng(kCheckSeed).split(9);
  r.pass = true;
  for (int i = 0; i < 10; ++i) {
    const std::size_t G = 1 + rng.below(6);
    const std::size_t C = 2 * G * (1 + rng.below(4));
    const std::size_t H = 1 + rng.below(7);
    const std::size_t W = 1 + rng.below(7);
    const std::size_t N = 1 + rng.below(2);
    const SaConfig cfg = SaConfig::variant(kAblationVariants[rng.below(5)], G);
    const auto formula = accounting::sa_flops_exact(C, H, W, cfg, N);
    const auto counted = count_sa_ops(Shape4{N, C, H, W}, cfg);
    r.pass = r.pass && formula == counted;
    r.detail += format("%s%llu", i ? "," : "", static_cast<unsigned long long>(counted));
    if (formula != counted) r.detail += format("!=%llu", static_cast<unsigned long long>(formula));
  }
  r.detail = "10 configs agree: " + r.detail;
  if (!r.pass) r.detail = "mismatch: " + r.detail;
  return r;
}

struct CheckSpec {
  int id;
  std::string name;
  std::function<CheckResult()> run;
};

inline CheckResult timed(const CheckSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{spec.id, spec.name, false, {}, 0.0};
  try {
    r = spec.run();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::vector<CheckSpec> all_checks(bool include_training) {
  std::vector<CheckSpec> v = {{1, "parameter identity 3C/G", check_param_identity},
                              {2, "ResNet-50 parameter deltas", check_table1_params},
                              {3, "ResNet-50 SA GFLOPs band", check_flops_claim},
                              {4, "gradient certification", [] { return check_gradients(); }},
                              {5, "init transparency", check_init_transparency},
                              {6, "structural invariants", check_structure},
                              {7, "oracle equivalence", check_oracle}};
  if (include_training) v.push_back({8, "toy ablation harness", [] { return check_toy_training(); }});
  v.push_back({9, "FLOP formula vs counter", check_flop_formula});
  return v;
}

inline std::string result_line(const CheckResult& r) {
  return format("[%s] %d. %-28s %6.2fs  %s", r.pass ? "PASS" : "FAIL", r.id, r.name.c_str(), r.seconds,
                r.detail.c_str());
}

}  // namespace satt::testing
