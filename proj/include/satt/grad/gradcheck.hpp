#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satt/attention.hpp"
#include "satt/grad/ops.hpp"
#include "satt/rng.hpp"

namespace satt::grad {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h.
inline std::vector<double> finite_difference(const ScalarFn& f, std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_difference: step must be positive");
  std::vector<double> probe(theta.begin(), theta.end());
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_difference: non-finite function value at coordinate " + std::to_string(i));
    }
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

struct GradCheckEntry {
  std::string name;
  std::vector<double> analytic;
  std::vector<double> numeric;
  double max_abs = 0.0;
  double max_rel = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;
  double step = 1e-5;
  bool pass = true;

  double worst_rel() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel);
    return w;
  }
};

// Relative error uses max(|a|, |n|, 1e-8) as the denominator.
inline GradCheckEntry compare_gradients(std::string name, std::vector<double> analytic,
                                        std::vector<double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("compare_gradients: '" + name + "' analytic/numeric lengths differ");
  }
  GradCheckEntry e{std::move(name), std::move(analytic), std::move(numeric)};
  for (std::size_t i = 0; i < e.analytic.size(); ++i) {
    const double a = e.analytic[i];
    const double n = e.numeric[i];
    const double abs_err = std::abs(a - n);
    const double rel = abs_err / std::max({std::abs(a), std::abs(n), 1e-8});
    // NaN never compares greater, so force it through.
    if (!(abs_err <= e.max_abs)) e.max_abs = abs_err;
    if (!(rel <= e.max_rel)) e.max_rel = rel;
  }
  return e;
}

inline void finalize(GradCheckReport& r) {
  r.pass = std::all_of(r.entries.begin(), r.entries.end(),
                       [&](const GradCheckEntry& e) { return e.max_rel <= r.tolerance; });
}

inline nlohmann::json to_json(const GradCheckReport& r) {
  auto entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    entries.push_back({{"name", e.name},
                       {"count", e.analytic.size()},
                       {"max_abs_diff", e.max_abs},
                       {"max_rel_diff", e.max_rel},
                       {"analytic", e.analytic},
                       {"numeric", e.numeric}});
  }
  return {{"tolerance", r.tolerance}, {"step", r.step}, {"metric", "|a-n| / max(|a|,|n|,1e-8)"},
          {"pass", r.pass}, {"entries", entries}};
}

inline std::string to_table(const GradCheckReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-10s %7s %14s %14s  %s\n", "quantity", "count", "max_abs", "max_rel",
                "status");
  os << line;
  for (const auto& e : r.entries) {
    std::snprintf(line, sizeof(line), "%-10s %7zu %14.6e %14.6e  %s\n", e.name.c_str(), e.analytic.size(),
                  e.max_abs, e.max_rel, e.max_rel <= r.tolerance ? "ok" : "FAIL");
    os << line;
  }
  std::snprintf(line, sizeof(line), "tolerance %.1e (central differences, h=%.1e): %s\n", r.tolerance, r.step,
                r.pass ? "PASS" : "FAIL");
  os << line;
  return os.str();
}

// Parameters away from the degenerate initialisation, for checks.
template <std::floating_point T>
SaParams<T> random_sa_params(std::size_t channels, std::size_t groups, FcVariant variant, Rng& rng) {
  auto p = SaParams<T>::init(channels, groups, variant);
  for (auto& v : p.w1) v = static_cast<T>(rng.normal(0.0, 0.8));
  for (auto& v : p.w2) v = static_cast<T>(rng.normal(0.0, 0.8));
  for (auto& v : p.b1) v = static_cast<T>(rng.normal(0.0, 0.5));
  for (auto& v : p.b2) v = static_cast<T>(rng.normal(0.0, 0.5));
  for (auto& v : p.gn_gamma) v = static_cast<T>(rng.normal(1.0, 0.3));
  for (auto& v : p.gn_beta) v = static_cast<T>(rng.normal(0.0, 0.3));
  return p;
}

namespace detail {

// Flat views used to perturb inputs and parameters as one vector.
inline std::vector<std::vector<double>*> sa_blocks(std::vector<double>& x, SaParams<double>& p) {
  return {&x, &p.w1, &p.b1, &p.w2, &p.b2, &p.gn_gamma, &p.gn_beta};
}

inline const char* const kSaBlockNames[] = {"x", "w1", "b1", "w2", "b2", "gn_gamma", "gn_beta"};

}  // namespace detail

// Certifies the tape backward of sa_forward against central differences of
// the plain forward, both in double precision. The scalar under test is
// sum(upstream * sa_forward(x)).
inline GradCheckReport check_sa_gradients(const Shape4& shape, const SaConfig& cfg, std::uint64_t seed,
                                          double tolerance = 1e-4, double step = 1e-5) {
  validate_shape(shape);
  cfg.validate(shape.c);
  Rng rng(seed);
  Rng data_rng = rng.split(1);
  Rng param_rng = rng.split(2);
  Rng upstream_rng = rng.split(3);
  const Tensor4d x = random_normal<double>(shape, data_rng);
  const SaParams<double> params = random_sa_params<double>(shape.c, cfg.groups, cfg.fc_variant, param_rng);
  const Tensor4d upstream = random_normal<double>(shape, upstream_rng);

  Tape<double> tape;
  Var xv = tape.leaf(x, "x");
  SaVars pv = sa_leaves(tape, params);
  Var out = sa_forward(tape, xv, pv, cfg);
  tape.backward(out, upstream);
  const SaParams<double> g = sa_grads(tape, pv, params);
  const std::vector<std::vector<double>> analytic = {tape.grad(xv).vec(), g.w1, g.b1, g.w2, g.b2,
                                                      g.gn_gamma, g.gn_beta};

  std::vector<double> xflat = x.vec();
  SaParams<double> probe = params;
  auto blocks = detail::sa_blocks(xflat, probe);

  GradCheckReport report;
  report.tolerance = tolerance;
  report.step = step;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::vector<double>& target = *blocks[b];
    const std::vector<double> theta = target;
    ScalarFn f = [&](std::span<const double> th) {
      std::copy(th.begin(), th.end(), target.begin());
      const Tensor4d y = satt::sa_forward(Tensor4d(shape, xflat), probe, cfg);
      double acc = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * upstream[i];
      return acc;
    };
    auto numeric = finite_difference(f, theta, step);
    target = theta;
    report.entries.push_back(compare_gradients(detail::kSaBlockNames[b], analytic[b], std::move(numeric)));
  }
  finalize(report);
  return report;
}

}  // namespace satt::grad
