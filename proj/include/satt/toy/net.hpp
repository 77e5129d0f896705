#pragma once

// A small residual classifier with pluggable attention.
//
//   stem:  conv3x3 (stride 2) -> norm -> relu
//   block: conv3x3 -> norm -> relu -> conv3x3 -> norm -> [attention] -> + skip -> relu
//   head:  global average pool -> linear
//
// The first block of every stage after the first halves the resolution; its
// skip path is a strided 1x1 conv followed by a norm. All other skips are
// identities. Norm is per-(sample, channel) spatial normalisation with a
// per-channel affine, so a sample's output never depends on its batch.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "satt/attention.hpp"
#include "satt/grad/layers.hpp"
#include "satt/grad/ops.hpp"
#include "satt/rng.hpp"
#include "satt/tensor.hpp"

namespace satt::toy {

enum class Attention { none, sa, se };

inline std::string_view to_string(Attention a) {
  switch (a) {
    case Attention::none:
      return "none";
    case Attention::sa:
      return "sa";
    case Attention::se:
      return "se";
  }
  return "none";
}

inline Attention parse_attention(std::string_view s) {
  if (s == "none") return Attention::none;
  if (s == "sa") return Attention::sa;
  if (s == "se") return Attention::se;
  throw ConfigError("unknown attention '" + std::string(s) + "' (expected none|sa|se)");
}

struct ToyNetConfig {
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t blocks_per_stage = 2;
  Attention attention = Attention::none;
  std::string sa_variant = "origin";
  std::size_t sa_groups = 8;
  std::size_t se_reduction = 8;
  std::size_t classes = 4;
  std::size_t input_channels = 1;
  std::size_t input_size = 32;
  std::size_t stem_stride = 2;

  SaConfig sa_config() const { return SaConfig::variant(sa_variant, sa_groups); }

  void validate() const {
    if (channels.empty()) throw ConfigError("toy net needs at least one stage");
    if (blocks_per_stage == 0) throw ConfigError("toy net blocks_per_stage must be positive");
    if (classes < 2) throw ConfigError("toy net needs at least 2 classes, got " + std::to_string(classes));
    if (input_channels == 0) throw ConfigError("toy net input_channels must be positive");
    if (stem_stride == 0 || stem_stride > 2) throw ConfigError("toy net stem_stride must be 1 or 2");
    std::size_t res = (input_size + stem_stride - 1) / stem_stride;
    for (std::size_t s = 0; s < channels.size(); ++s) {
      if (channels[s] == 0) throw ConfigError("stage " + std::to_string(s) + " has zero channels");
      if (s > 0) res = (res + 1) / 2;
      if (attention == Attention::sa) {
        const SaConfig cfg = sa_config();
        if (channels[s] % (2 * sa_groups) != 0) {
          throw ConfigError("stage " + std::to_string(s) + ": C=" + std::to_string(channels[s]) +
                            " not divisible by 2*G, G=" + std::to_string(sa_groups));
        }
        cfg.validate(channels[s]);
      }
      if (attention == Attention::se && (se_reduction == 0 || channels[s] % se_reduction != 0)) {
        throw ConfigError("stage " + std::to_string(s) + ": C=" + std::to_string(channels[s]) +
                          " not divisible by r=" + std::to_string(se_reduction));
      }
    }
    if (input_size < 2 || res == 0) throw ConfigError("toy net input_size too small for the stage count");
  }
};

inline nlohmann::json to_json(const ToyNetConfig& c) {
  return {{"channels", c.channels},
          {"blocks_per_stage", c.blocks_per_stage},
          {"attention", std::string(to_string(c.attention))},
          {"sa_variant", c.sa_variant},
          {"sa_groups", c.sa_groups},
          {"se_reduction", c.se_reduction},
          {"classes", c.classes},
          {"input_channels", c.input_channels},
          {"input_size", c.input_size},
          {"stem_stride", c.stem_stride}};
}

inline ToyNetConfig net_config_from_json(const nlohmann::json& j) {
  ToyNetConfig c;
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  try {
    if (j.contains("channels")) c.channels = j.at("channels").get<std::vector<std::size_t>>();
    if (j.contains("blocks_per_stage")) c.blocks_per_stage = j.at("blocks_per_stage").get<std::size_t>();
    if (j.contains("attention")) c.attention = parse_attention(j.at("attention").get<std::string>());
    if (j.contains("sa_variant")) c.sa_variant = j.at("sa_variant").get<std::string>();
    if (j.contains("sa_groups")) c.sa_groups = j.at("sa_groups").get<std::size_t>();
    if (j.contains("se_reduction")) c.se_reduction = j.at("se_reduction").get<std::size_t>();
    if (j.contains("classes")) c.classes = j.at("classes").get<std::size_t>();
    if (j.contains("input_channels")) c.input_channels = j.at("input_channels").get<std::size_t>();
    if (j.contains("input_size")) c.input_size = j.at("input_size").get<std::size_t>();
    if (j.contains("stem_stride")) c.stem_stride = j.at("stem_stride").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  (void)c.sa_config();
  c.validate();
  return c;
}

struct Param {
  std::string name;
  Tensor4f value;
};

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct Block {
  std::size_t in_channels = 0, out_channels = 0, stride = 1;
  std::size_t conv1 = kNone, norm1 = kNone, conv2 = kNone, norm2 = kNone;  // norm index = gamma; beta follows
  std::size_t proj = kNone, proj_norm = kNone;
  std::size_t attention = kNone;  // first of 6 SA or 4 SE params, in SaVars / SeVars order
};

struct ToyNet {
  ToyNetConfig config;
  std::vector<Param> params;
  std::size_t stem = kNone, stem_norm = kNone;
  std::vector<Block> blocks;
  std::size_t fc = kNone;  // weight; bias follows

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].name == name) return i;
    }
    throw ConfigError("no parameter named '" + std::string(name) + "'");
  }

  // The SA parameters of block b as an SaParams record.
  SaParams<float> sa_params(std::size_t b) const {
    if (config.attention != Attention::sa) throw StateError("sa_params: network has no SA blocks");
    const Block& blk = blocks.at(b);
    const SaConfig cfg = config.sa_config();
    SaParams<float> p = SaParams<float>::init(blk.out_channels, cfg.groups, cfg.fc_variant);
    std::vector<float>* dst[] = {&p.w1, &p.b1, &p.w2, &p.b2, &p.gn_gamma, &p.gn_beta};
    for (std::size_t i = 0; i < 6; ++i) *dst[i] = params[blk.attention + i].value.vec();
    return p;
  }

  void set_sa_params(std::size_t b, const SaParams<float>& p) {
    const Block& blk = blocks.at(b);
    const std::vector<float>* src[] = {&p.w1, &p.b1, &p.w2, &p.b2, &p.gn_gamma, &p.gn_beta};
    for (std::size_t i = 0; i < 6; ++i) {
      Tensor4f& dst = params[blk.attention + i].value;
      if (src[i]->size() != dst.size()) {
        throw ShapeError("set_sa_params: '" + params[blk.attention + i].name + "' expects " +
                         std::to_string(dst.size()) + " values, got " + std::to_string(src[i]->size()));
      }
      dst = Tensor4f(dst.shape(), *src[i]);
    }
  }
};

namespace detail {

inline std::uint64_t name_stream(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Every parameter draws from its own stream keyed by its name, so networks
// that differ only in attention share all convolution weights.
inline std::size_t add_param(ToyNet& net, const Rng& rng, std::string name, Shape4 shape, double stddev,
                             double fill = 0.0) {
  Tensor4f t(shape, static_cast<float>(fill));
  if (stddev > 0.0) {
    Rng r = rng.split(name_stream(name));
    r.fill_normal(t, 0.0, stddev);
  }
  net.params.push_back(Param{std::move(name), std::move(t)});
  return net.params.size() - 1;
}

inline std::size_t add_conv(ToyNet& net, const Rng& rng, const std::string& name, std::size_t cin,
                            std::size_t cout, std::size_t k) {
  const double fan_in = static_cast<double>(cin * k * k);
  return add_param(net, rng, name, Shape4{cout, cin, k, k}, std::sqrt(2.0 / fan_in));
}

inline std::size_t add_norm(ToyNet& net, const Rng& rng, const std::string& name, std::size_t c) {
  const std::size_t g = add_param(net, rng, name + ".gamma", Shape4{1, c, 1, 1}, 0.0, 1.0);
  add_param(net, rng, name + ".beta", Shape4{1, c, 1, 1}, 0.0, 0.0);
  return g;
}

inline std::size_t add_vector(ToyNet& net, const std::string& name, const std::vector<float>& v) {
  net.params.push_back(Param{name, Tensor4f(Shape4{1, v.size(), 1, 1}, v)});
  return net.params.size() - 1;
}

}  // namespace detail

inline ToyNet build(const ToyNetConfig& cfg, const Rng& rng) {
  cfg.validate();
  ToyNet net;
  net.config = cfg;
  net.stem = detail::add_conv(net, rng, "stem.conv", cfg.input_channels, cfg.channels[0], 3);
  net.stem_norm = detail::add_norm(net, rng, "stem.norm", cfg.channels[0]);
  std::size_t in = cfg.channels[0];
  for (std::size_t s = 0; s < cfg.channels.size(); ++s) {
    const std::size_t out = cfg.channels[s];
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b) + ".";
      Block blk;
      blk.in_channels = in;
      blk.out_channels = out;
      blk.stride = (s > 0 && b == 0) ? 2 : 1;
      blk.conv1 = detail::add_conv(net, rng, prefix + "conv1", in, out, 3);
      blk.norm1 = detail::add_norm(net, rng, prefix + "norm1", out);
      blk.conv2 = detail::add_conv(net, rng, prefix + "conv2", out, out, 3);
      blk.norm2 = detail::add_norm(net, rng, prefix + "norm2", out);
      if (blk.stride != 1 || in != out) {
        blk.proj = detail::add_conv(net, rng, prefix + "proj", in, out, 1);
        blk.proj_norm = detail::add_norm(net, rng, prefix + "proj_norm", out);
      }
      if (cfg.attention == Attention::sa) {
        const SaConfig sc = cfg.sa_config();
        const auto p = SaParams<float>::init(out, sc.groups, sc.fc_variant);
        blk.attention = detail::add_vector(net, prefix + "sa.w1", p.w1);
        detail::add_vector(net, prefix + "sa.b1", p.b1);
        detail::add_vector(net, prefix + "sa.w2", p.w2);
        detail::add_vector(net, prefix + "sa.b2", p.b2);
        detail::add_vector(net, prefix + "sa.gn_gamma", p.gn_gamma);
        detail::add_vector(net, prefix + "sa.gn_beta", p.gn_beta);
      } else if (cfg.attention == Attention::se) {
        const std::size_t hidden = out / cfg.se_reduction;
        blk.attention = detail::add_param(net, rng, prefix + "se.fc1", Shape4{1, out * hidden, 1, 1},
                                          std::sqrt(2.0 / static_cast<double>(out)));
        detail::add_param(net, rng, prefix + "se.b1", Shape4{1, hidden, 1, 1}, 0.0);
        detail::add_param(net, rng, prefix + "se.fc2", Shape4{1, hidden * out, 1, 1},
                          std::sqrt(1.0 / static_cast<double>(hidden)));
        detail::add_param(net, rng, prefix + "se.b2", Shape4{1, out, 1, 1}, 0.0);
      }
      net.blocks.push_back(blk);
      in = out;
    }
  }
  net.fc = detail::add_param(net, rng, "fc.weight", Shape4{cfg.classes, in, 1, 1},
                             std::sqrt(1.0 / static_cast<double>(in)));
  detail::add_param(net, rng, "fc.bias", Shape4{1, cfg.classes, 1, 1}, 0.0);
  return net;
}

// Tape leaves for every parameter, in ToyNet::params order.
inline std::vector<grad::Var> param_leaves(grad::Tape<float>& tape, const ToyNet& net) {
  std::vector<grad::Var> v;
  v.reserve(net.params.size());
  for (const auto& p : net.params) v.push_back(tape.leaf(p.value, p.name));
  return v;
}

namespace detail {

inline grad::Var conv_norm(grad::Tape<float>& t, const std::vector<grad::Var>& p, grad::Var x, std::size_t conv,
                           std::size_t norm, std::size_t stride, std::size_t pad) {
  grad::Var y = grad::conv2d(t, x, p[conv], stride, pad);
  return grad::channel_norm(t, y, p[norm], p[norm + 1]);
}

}  // namespace detail

// conv -> norm -> relu -> conv -> norm; the block's pre-attention branch.
inline grad::Var residual_branch(grad::Tape<float>& t, const ToyNet& net, const std::vector<grad::Var>& p,
                                 std::size_t b, grad::Var x) {
  const Block& blk = net.blocks.at(b);
  grad::Var h = grad::relu(t, detail::conv_norm(t, p, x, blk.conv1, blk.norm1, blk.stride, 1));
  return detail::conv_norm(t, p, h, blk.conv2, blk.norm2, 1, 1);
}

inline grad::Var skip_path(grad::Tape<float>& t, const ToyNet& net, const std::vector<grad::Var>& p,
                           std::size_t b, grad::Var x) {
  const Block& blk = net.blocks.at(b);
  if (blk.proj == kNone) return x;
  return detail::conv_norm(t, p, x, blk.proj, blk.proj_norm, blk.stride, 0);
}

inline grad::Var attention(grad::Tape<float>& t, const ToyNet& net, const std::vector<grad::Var>& p,
                           std::size_t b, grad::Var h) {
  const Block& blk = net.blocks.at(b);
  const std::size_t a = blk.attention;
  switch (net.config.attention) {
    case Attention::sa:
      return grad::sa_forward(t, h, grad::SaVars{p[a], p[a + 1], p[a + 2], p[a + 3], p[a + 4], p[a + 5]},
                              net.config.sa_config());
    case Attention::se:
      return grad::se_forward(t, h, grad::SeVars{p[a], p[a + 1], p[a + 2], p[a + 3]}, net.config.se_reduction);
    case Attention::none:
      break;
  }
  return h;
}

inline grad::Var block_forward(grad::Tape<float>& t, const ToyNet& net, const std::vector<grad::Var>& p,
                               std::size_t b, grad::Var x) {
  grad::Var h = attention(t, net, p, b, residual_branch(t, net, p, b, x));
  return grad::relu(t, grad::add(t, h, skip_path(t, net, p, b, x)));
}

// Logits (n, classes, 1, 1) for a batch of images.
inline grad::Var forward(grad::Tape<float>& t, const ToyNet& net, const std::vector<grad::Var>& p,
                         const Tensor4f& images) {
  const ToyNetConfig& cfg = net.config;
  if (images.c() != cfg.input_channels) {
    throw ShapeError("toy net expects " + std::to_string(cfg.input_channels) + " input channels, got c=" +
                     std::to_string(images.c()));
  }
  grad::Var x = t.leaf(images, "images");
  x = grad::relu(t, detail::conv_norm(t, p, x, net.stem, net.stem_norm, cfg.stem_stride, 1));
  for (std::size_t b = 0; b < net.blocks.size(); ++b) x = block_forward(t, net, p, b, x);
  grad::Var pooled = grad::mean_spatial(t, x);
  return grad::linear(t, pooled, p[net.fc], p[net.fc + 1]);
}

// Logits without keeping a tape around.
inline Tensor4f predict_logits(const ToyNet& net, const Tensor4f& images) {
  grad::Tape<float> t;
  const auto p = param_leaves(t, net);
  return t.value(forward(t, net, p, images));
}

}  // namespace satt::toy
