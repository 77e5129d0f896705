#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "satt/ops.hpp"
#include "satt/tensor.hpp"

namespace satt {

// How the per-branch statistics are turned into gate logits.
//   affine   - w[j] * t + b[j], one scale/shift per sub-channel
//   conv1x1  - b[j] + sum_l w[j*k + l] * t_l, a k x k channel-mixing matrix
//   identity - the statistic itself is the logit (no learned transform)
enum class GateTransform { affine, conv1x1, identity };

enum class FcVariant { affine, conv1x1 };

inline std::string_view to_string(FcVariant v) {
  return v == FcVariant::affine ? "affine" : "conv1x1";
}

inline FcVariant parse_fc_variant(std::string_view s) {
  if (s == "affine") return FcVariant::affine;
  if (s == "conv1x1") return FcVariant::conv1x1;
  throw ConfigError("unknown fc_variant '" + std::string(s) + "' (expected affine|conv1x1)");
}

struct SaConfig {
  std::size_t groups = 64;
  std::size_t shuffle_groups = 2;
  double gn_epsilon = 1e-5;
  bool enable_gn = true;
  bool enable_shuffle = true;
  bool enable_fc = true;
  FcVariant fc_variant = FcVariant::affine;

  GateTransform transform() const {
    if (!enable_fc) return GateTransform::identity;
    return fc_variant == FcVariant::affine ? GateTransform::affine : GateTransform::conv1x1;
  }

  // Sub-channels per branch, C / 2G.
  std::size_t branch_width(std::size_t channels) const { return channels / (2 * groups); }

  void validate(std::size_t channels) const {
    if (groups == 0 || channels % (2 * groups) != 0) {
      throw ConfigError("shuffle attention needs C divisible by 2*G, got C=" + std::to_string(channels) +
                        ", G=" + std::to_string(groups));
    }
    if (enable_shuffle && (shuffle_groups == 0 || channels % shuffle_groups != 0)) {
      throw ConfigError("channel shuffle needs C divisible by shuffle_groups, got C=" +
                        std::to_string(channels) + ", shuffle_groups=" + std::to_string(shuffle_groups));
    }
    if (!(gn_epsilon > 0.0)) throw ConfigError("gn_epsilon must be positive");
  }

  // The ablation rows: origin, wo_gn, wo_shuffle, wo_fc, conv1x1.
  static SaConfig variant(std::string_view name, std::size_t groups) {
    SaConfig cfg;
    cfg.groups = groups;
    if (name == "origin") return cfg;
    if (name == "wo_gn") {
      cfg.enable_gn = false;
    } else if (name == "wo_shuffle") {
      cfg.enable_shuffle = false;
    } else if (name == "wo_fc") {
      cfg.enable_fc = false;
    } else if (name == "conv1x1") {
      cfg.fc_variant = FcVariant::conv1x1;
    } else {
      throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
    }
    return cfg;
  }
};

inline constexpr std::string_view kAblationVariants[] = {"origin", "wo_gn", "wo_shuffle", "wo_fc",
                                                         "conv1x1"};

// Learnable state of one shuffle-attention instance. All vectors are shared
// by the G groups; w1/w2 hold k entries (affine) or k*k entries (conv1x1),
// with k = C / 2G.
template <std::floating_point T>
struct SaParams {
  std::size_t channels = 0;
  std::size_t groups = 0;
  FcVariant variant = FcVariant::affine;
  std::vector<T> w1, b1, w2, b2, gn_gamma, gn_beta;

  std::size_t branch_width() const { return channels / (2 * groups); }

  // Weights 0, biases 1, GN affine at identity.
  static SaParams init(std::size_t channels, std::size_t groups, FcVariant variant = FcVariant::affine) {
    if (groups == 0 || channels % (2 * groups) != 0) {
      throw ConfigError("shuffle attention needs C divisible by 2*G, got C=" + std::to_string(channels) +
                        ", G=" + std::to_string(groups));
    }
    SaParams p;
    p.channels = channels;
    p.groups = groups;
    p.variant = variant;
    const std::size_t k = p.branch_width();
    const std::size_t wlen = variant == FcVariant::affine ? k : k * k;
    p.w1.assign(wlen, T(0));
    p.w2.assign(wlen, T(0));
    p.b1.assign(k, T(1));
    p.b2.assign(k, T(1));
    p.gn_gamma.assign(k, T(1));
    p.gn_beta.assign(k, T(0));
    return p;
  }

  std::size_t count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + gn_gamma.size() + gn_beta.size();
  }

  void validate() const {
    if (groups == 0 || channels % (2 * groups) != 0) {
      throw ConfigError("SaParams: C=" + std::to_string(channels) + " not divisible by 2*G, G=" +
                        std::to_string(groups));
    }
    const std::size_t k = branch_width();
    const std::size_t wlen = variant == FcVariant::affine ? k : k * k;
    auto check = [&](const std::vector<T>& v, std::size_t want, const char* name) {
      if (v.size() != want) {
        throw ShapeError(std::string("SaParams: ") + name + " has length " + std::to_string(v.size()) +
                         ", expected " + std::to_string(want));
      }
    };
    check(w1, wlen, "w1");
    check(w2, wlen, "w2");
    check(b1, k, "b1");
    check(b2, k, "b2");
    check(gn_gamma, k, "gn_gamma");
    check(gn_beta, k, "gn_beta");
  }

  template <std::floating_point U>
  SaParams<U> cast() const {
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    SaParams<U> out;
    out.channels = channels;
    out.groups = groups;
    out.variant = variant;
    out.w1 = conv(w1);
    out.b1 = conv(b1);
    out.w2 = conv(w2);
    out.b2 = conv(b2);
    out.gn_gamma = conv(gn_gamma);
    out.gn_beta = conv(gn_beta);
    return out;
  }
};

namespace detail {

inline void check_gate_lengths(GateTransform mode, std::size_t k, std::size_t wlen, std::size_t blen,
                               const char* what) {
  const bool ok = mode == GateTransform::identity ||
                  (blen == k && wlen == (mode == GateTransform::affine ? k : k * k));
  if (!ok) {
    throw ShapeError(std::string(what) + ": parameter lengths w=" + std::to_string(wlen) +
                     ", b=" + std::to_string(blen) + " do not match " + std::to_string(k) + " channels");
  }
}

// Logit for sub-channel j given the statistics t[0..k) of all sub-channels.
template <std::floating_point T>
T gate_logit(GateTransform mode, std::span<const T> w, std::span<const T> b, std::span<const T> t,
             std::size_t j) {
  switch (mode) {
    case GateTransform::affine:
      return w[j] * t[j] + b[j];
    case GateTransform::conv1x1: {
      const std::size_t k = t.size();
      T acc = b[j];
      for (std::size_t l = 0; l < k; ++l) acc += w[j * k + l] * t[l];
      return acc;
    }
    case GateTransform::identity:
      break;
  }
  return t[j];
}

// Channel attention over k planes: in[j] -> out[j].
template <std::floating_point T>
void channel_gate_planes(std::span<const T* const> in, std::span<T* const> out, std::size_t hw,
                         GateTransform mode, std::span<const T> w, std::span<const T> b) {
  const std::size_t k = in.size();
  std::vector<T> stats(k);
  for (std::size_t j = 0; j < k; ++j) {
    stats[j] = static_cast<T>(plane_mean(std::span<const T>(in[j], hw)));
  }
  for (std::size_t j = 0; j < k; ++j) {
    const T gate = sigmoid(gate_logit<T>(mode, w, b, stats, j));
    for (std::size_t i = 0; i < hw; ++i) out[j][i] = gate * in[j][i];
  }
}

// Spatial attention over k planes. `scratch` must hold k*hw values.
template <std::floating_point T>
void spatial_gate_planes(std::span<const T* const> in, std::span<T* const> out, std::size_t hw,
                         GateTransform mode, std::span<const T> w, std::span<const T> b,
                         std::span<const T> gamma, std::span<const T> beta, double eps, bool with_gn,
                         std::span<T> scratch) {
  const std::size_t k = in.size();
  for (std::size_t j = 0; j < k; ++j) {
    T* u = scratch.data() + j * hw;
    if (with_gn) {
      std::span<const T> plane(in[j], hw);
      const double mean = plane_mean(plane);
      const double inv = 1.0 / std::sqrt(plane_variance(plane, mean) + eps);
      for (std::size_t i = 0; i < hw; ++i) {
        const T xhat = static_cast<T>((static_cast<double>(in[j][i]) - mean) * inv);
        u[i] = gamma[j] * xhat + beta[j];
      }
    } else {
      std::copy(in[j], in[j] + hw, u);
    }
  }
  std::vector<T> column(k);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < k; ++j) column[j] = scratch[j * hw + i];
    for (std::size_t j = 0; j < k; ++j) {
      const T gate = sigmoid(gate_logit<T>(mode, w, b, column, j));
      out[j][i] = gate * in[j][i];
    }
  }
}

template <std::floating_point T>
std::vector<const T*> plane_ptrs(const Tensor4<T>& x, std::size_t n) {
  std::vector<const T*> p(x.c());
  for (std::size_t c = 0; c < x.c(); ++c) p[c] = x.plane(n, c).data();
  return p;
}

template <std::floating_point T>
std::vector<T*> plane_ptrs(Tensor4<T>& x, std::size_t n) {
  std::vector<T*> p(x.c());
  for (std::size_t c = 0; c < x.c(); ++c) p[c] = x.plane(n, c).data();
  return p;
}

}  // namespace detail

// X'_{k1} = sigmoid(F(GAP(X_{k1}))) * X_{k1}, per sample and sub-channel.
template <std::floating_point T>
Tensor4<T> channel_branch(const Tensor4<T>& xk1, std::span<const T> w1, std::span<const T> b1,
                          GateTransform mode = GateTransform::affine) {
  detail::check_gate_lengths(mode, xk1.c(), w1.size(), b1.size(), "channel_branch");
  Tensor4<T> out(xk1.shape());
  for (std::size_t n = 0; n < xk1.n(); ++n) {
    const auto in = detail::plane_ptrs(xk1, n);
    const auto dst = detail::plane_ptrs(out, n);
    detail::channel_gate_planes<T>(in, dst, xk1.shape().spatial(), mode, w1, b1);
  }
  return out;
}

// X'_{k2} = sigmoid(F(GN(X_{k2}))) * X_{k2}; GN normalizes each plane over
// its h*w positions (biased variance) and applies gamma/beta per channel.
template <std::floating_point T>
Tensor4<T> spatial_branch(const Tensor4<T>& xk2, std::span<const T> w2, std::span<const T> b2,
                          std::span<const T> gn_gamma, std::span<const T> gn_beta, double eps,
                          bool with_gn, GateTransform mode = GateTransform::affine) {
  detail::check_gate_lengths(mode, xk2.c(), w2.size(), b2.size(), "spatial_branch");
  if (with_gn && (gn_gamma.size() != xk2.c() || gn_beta.size() != xk2.c())) {
    throw ShapeError("spatial_branch: GN affine lengths do not match " + std::to_string(xk2.c()) +
                     " channels");
  }
  Tensor4<T> out(xk2.shape());
  const std::size_t hw = xk2.shape().spatial();
  std::vector<T> scratch(xk2.c() * hw);
  for (std::size_t n = 0; n < xk2.n(); ++n) {
    const auto in = detail::plane_ptrs(xk2, n);
    const auto dst = detail::plane_ptrs(out, n);
    detail::spatial_gate_planes<T>(in, dst, hw, mode, w2, b2, gn_gamma, gn_beta, eps, with_gn, scratch);
  }
  return out;
}

inline void check_sa_params_match(std::size_t channels, const SaConfig& cfg, std::size_t p_channels,
                                  std::size_t p_groups, FcVariant p_variant) {
  cfg.validate(channels);
  if (p_channels != channels || p_groups != cfg.groups) {
    throw ConfigError("SaParams built for C=" + std::to_string(p_channels) + ", G=" +
                      std::to_string(p_groups) + " used with C=" + std::to_string(channels) +
                      ", G=" + std::to_string(cfg.groups));
  }
  if (cfg.enable_fc && p_variant != cfg.fc_variant) {
    throw ConfigError("SaParams fc_variant '" + std::string(to_string(p_variant)) +
                      "' does not match config '" + std::string(to_string(cfg.fc_variant)) + "'");
  }
}

// Shuffle attention forward. Semantically: split into G groups, split each
// group into halves, channel branch on the first half, spatial branch on the
// second, concatenate, then channel_shuffle(., shuffle_groups). This version
// writes each branch result straight to its final shuffled channel.
template <std::floating_point T>
Tensor4<T> sa_forward(const Tensor4<T>& x, const SaParams<T>& params, const SaConfig& cfg) {
  check_sa_params_match(x.c(), cfg, params.channels, params.groups, params.variant);
  params.validate();
  const std::size_t C = x.c();
  const std::size_t per_group = C / cfg.groups;
  const std::size_t k = per_group / 2;
  const std::size_t hw = x.shape().spatial();
  const GateTransform mode = cfg.transform();

  std::vector<std::size_t> dest(C);
  if (cfg.enable_shuffle) {
    const auto source = shuffle_permutation(C, cfg.shuffle_groups);
    for (std::size_t j = 0; j < C; ++j) dest[source[j]] = j;
  } else {
    for (std::size_t j = 0; j < C; ++j) dest[j] = j;
  }

  Tensor4<T> out(x.shape());
  std::vector<T> scratch(k * hw);
  std::vector<const T*> in(k);
  std::vector<T*> dst(k);
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t g = 0; g < cfg.groups; ++g) {
      const std::size_t base = g * per_group;
      for (std::size_t j = 0; j < k; ++j) {
        in[j] = x.plane(n, base + j).data();
        dst[j] = out.plane(n, dest[base + j]).data();
      }
      detail::channel_gate_planes<T>(in, dst, hw, mode, params.w1, params.b1);
      for (std::size_t j = 0; j < k; ++j) {
        in[j] = x.plane(n, base + k + j).data();
        dst[j] = out.plane(n, dest[base + k + j]).data();
      }
      detail::spatial_gate_planes<T>(in, dst, hw, mode, params.w2, params.b2, params.gn_gamma,
                                     params.gn_beta, cfg.gn_epsilon, cfg.enable_gn, scratch);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation, kept for comparisons and cost accounting.

template <std::floating_point T>
struct SeParams {
  std::size_t channels = 0;
  std::size_t reduction = 1;
  std::vector<T> fc1;  // C x C/r, row-major: fc1[c * (C/r) + h]
  std::vector<T> b1;   // C/r
  std::vector<T> fc2;  // C/r x C, row-major: fc2[h * C + c]
  std::vector<T> b2;   // C

  std::size_t hidden() const { return channels / reduction; }

  static SeParams zeros(std::size_t channels, std::size_t reduction) {
    if (reduction == 0 || channels % reduction != 0) {
      throw ConfigError("SE needs C divisible by r, got C=" + std::to_string(channels) +
                        ", r=" + std::to_string(reduction));
    }
    SeParams p;
    p.channels = channels;
    p.reduction = reduction;
    const std::size_t h = p.hidden();
    p.fc1.assign(channels * h, T(0));
    p.b1.assign(h, T(0));
    p.fc2.assign(h * channels, T(0));
    p.b2.assign(channels, T(0));
    return p;
  }

  std::size_t count() const { return fc1.size() + b1.size() + fc2.size() + b2.size(); }

  void validate() const {
    if (reduction == 0 || channels % reduction != 0) {
      throw ConfigError("SE needs C divisible by r, got C=" + std::to_string(channels) +
                        ", r=" + std::to_string(reduction));
    }
    const std::size_t h = hidden();
    if (fc1.size() != channels * h || fc2.size() != h * channels || b1.size() != h ||
        b2.size() != channels) {
      throw ShapeError("SeParams: parameter lengths do not match C=" + std::to_string(channels) +
                       ", r=" + std::to_string(reduction));
    }
  }
};

// GAP -> FC(C -> C/r) -> ReLU -> FC(C/r -> C) -> sigmoid -> channel scale.
template <std::floating_point T>
Tensor4<T> se_forward(const Tensor4<T>& x, const SeParams<T>& p) {
  p.validate();
  if (x.c() != p.channels) {
    throw ShapeError("se_forward: input has c=" + std::to_string(x.c()) + ", params expect " +
                     std::to_string(p.channels));
  }
  const std::size_t C = p.channels;
  const std::size_t H = p.hidden();
  Tensor4<T> out(x.shape());
  std::vector<T> s(C), hidden(H);
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < C; ++c) s[c] = static_cast<T>(plane_mean(x.plane(n, c)));
    for (std::size_t h = 0; h < H; ++h) {
      T acc = p.b1[h];
      for (std::size_t c = 0; c < C; ++c) acc += s[c] * p.fc1[c * H + h];
      hidden[h] = acc > T(0) ? acc : T(0);
    }
    for (std::size_t c = 0; c < C; ++c) {
      T acc = p.b2[c];
      for (std::size_t h = 0; h < H; ++h) acc += hidden[h] * p.fc2[h * C + c];
      const T gate = sigmoid(acc);
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = gate * src[i];
    }
  }
  return out;
}

}  // namespace satt
