#pragma once

// Parameter and FLOP accounting for attention modules attached to the output
// of every bottleneck block of a ResNet-style backbone.
//
// Two FLOP conventions are reported side by side:
//   exact      every scalar add, sub, mul, div, sqrt and sigmoid counts 1
//              (a multiply-add is 2). Matches the instrumented reference.
//   layer-hook what per-layer hook counters report: multiply-accumulates of
//              convolution / linear layers plus one op per pooling input
//              element; normalisation, activations and elementwise products
//              are free. The backbone column uses this convention too.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "satt/attention.hpp"

namespace satt::accounting {

struct StageSpec {
  std::size_t blocks = 0;
  std::size_t channels = 0;
  std::size_t spatial = 0;
};

struct ModelDescriptor {
  std::string name = "custom";
  std::size_t input_size = 224;
  std::size_t stem_channels = 64;
  std::size_t classes = 1000;
  std::vector<StageSpec> stages;

  static ModelDescriptor resnet50() {
    return {"resnet50", 224, 64, 1000, {{3, 256, 56}, {4, 512, 28}, {6, 1024, 14}, {3, 2048, 7}}};
  }
  static ModelDescriptor resnet101() {
    return {"resnet101", 224, 64, 1000, {{3, 256, 56}, {4, 512, 28}, {23, 1024, 14}, {3, 2048, 7}}};
  }

  std::size_t block_count() const {
    std::size_t b = 0;
    for (const auto& s : stages) b += s.blocks;
    return b;
  }

  // Stem is a stride-2 7x7 conv followed by a stride-2 max pool, so the first
  // stage sees input_size / 4.
  void validate() const {
    if (stages.empty()) throw ConfigError("model descriptor '" + name + "' has no stages");
    if (input_size < 4 || input_size % 4 != 0) {
      throw ConfigError("input_size must be a positive multiple of 4, got " + std::to_string(input_size));
    }
    if (stem_channels == 0 || classes == 0) throw ConfigError("stem_channels and classes must be positive");
    std::size_t prev = input_size / 4;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const auto& s = stages[i];
      if (s.blocks == 0 || s.channels == 0 || s.spatial == 0) {
        throw ConfigError("stage " + std::to_string(i) + ": blocks, channels and spatial must be positive");
      }
      if (s.channels % 4 != 0) {
        throw ConfigError("stage " + std::to_string(i) + ": channels must be divisible by 4 (bottleneck width)");
      }
      if (prev % s.spatial != 0) {
        throw ConfigError("stage " + std::to_string(i) + ": spatial " + std::to_string(s.spatial) +
                          " does not divide the incoming size " + std::to_string(prev));
      }
      prev = s.spatial;
    }
  }
};

inline ModelDescriptor preset(std::string_view name) {
  if (name == "resnet50") return ModelDescriptor::resnet50();
  if (name == "resnet101") return ModelDescriptor::resnet101();
  throw ConfigError("unknown model preset '" + std::string(name) + "' (expected resnet50|resnet101)");
}

inline ModelDescriptor descriptor_from_json(const nlohmann::json& doc) {
  try {
    ModelDescriptor d;
    d.name = doc.value("name", std::string("custom"));
    d.input_size = doc.value("input_size", std::size_t{224});
    d.stem_channels = doc.value("stem_channels", std::size_t{64});
    d.classes = doc.value("classes", std::size_t{1000});
    for (const auto& s : doc.at("stages")) {
      d.stages.push_back({s.at("blocks").get<std::size_t>(), s.at("channels").get<std::size_t>(),
                          s.at("spatial").get<std::size_t>()});
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model descriptor: ") + e.what());
  }
}

inline ModelDescriptor load_descriptor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open model descriptor '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return descriptor_from_json(doc);
}

struct Cost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

// ---------------------------------------------------------------------------
// Shuffle attention.

// Exact scalar-operation count of one shuffle-attention forward pass.
// Per group and sample, with k = C/2G, hw = H*W and L the logit cost per
// statistic column (affine 2k, conv1x1 2k^2, identity 0):
//   channel half  k(hw+1) mean + L + k sigmoid + k*hw gate product
//   spatial half  k(8hw+5) group norm (if enabled) + hw*L + 2k*hw
inline std::uint64_t sa_flops_exact(std::uint64_t C, std::uint64_t H, std::uint64_t W, const SaConfig& cfg,
                                    std::uint64_t N = 1) {
  cfg.validate(C);
  const std::uint64_t G = cfg.groups;
  const std::uint64_t k = C / (2 * G);
  const std::uint64_t hw = H * W;
  std::uint64_t logit = 0;
  switch (cfg.transform()) {
    case GateTransform::affine:
      logit = 2 * k;
      break;
    case GateTransform::conv1x1:
      logit = 2 * k * k;
      break;
    case GateTransform::identity:
      break;
  }
  const std::uint64_t channel = k * (hw + 1) + logit + k + k * hw;
  const std::uint64_t norm = cfg.enable_gn ? k * (8 * hw + 5) : 0;
  const std::uint64_t spatial = norm + hw * logit + 2 * k * hw;
  return N * G * (channel + spatial);
}

// Layer-hook count: the pooled half feeds an average pool (one op per input
// element); the conv1x1 variant adds k multiply-accumulates per output of its
// two grouped 1x1 convolutions.
inline std::uint64_t sa_flops_hook(std::uint64_t C, std::uint64_t H, std::uint64_t W, const SaConfig& cfg,
                                   std::uint64_t N = 1) {
  cfg.validate(C);
  const std::uint64_t k = C / (2 * cfg.groups);
  std::uint64_t flops = N * (C / 2) * H * W;
  if (cfg.transform() == GateTransform::conv1x1) flops += N * (C / 2) * k * (1 + H * W);
  return flops;
}

inline std::uint64_t sa_params(std::uint64_t C, const SaConfig& cfg) {
  cfg.validate(C);
  const std::uint64_t k = C / (2 * cfg.groups);
  const std::uint64_t w = cfg.fc_variant == FcVariant::conv1x1 ? k * k : k;
  return 2 * w + 4 * k;
}

// params = 3C/G for the default module; flops in the exact convention.
inline Cost sa_cost(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t G, std::uint64_t N = 1) {
  SaConfig cfg;
  cfg.groups = G;
  return {sa_params(C, cfg), sa_flops_exact(C, H, W, cfg, N)};
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation.

inline void check_se(std::uint64_t C, std::uint64_t r) {
  if (r == 0 || C % r != 0) {
    throw ConfigError("SE needs C divisible by r, got C=" + std::to_string(C) + ", r=" + std::to_string(r));
  }
}

// Two FC layers, C -> C/r -> C. Without biases params = 2C^2/r.
inline std::uint64_t se_params(std::uint64_t C, std::uint64_t r, bool with_bias = false) {
  check_se(C, r);
  return 2 * C * C / r + (with_bias ? C / r + C : 0);
}

// GAP C(hw+1), FC layers 4C^2/r, sigmoid C, channel scaling C*hw.
inline std::uint64_t se_flops_exact(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t r,
                                    std::uint64_t N = 1) {
  check_se(C, r);
  const std::uint64_t hw = H * W;
  return N * (C * (hw + 1) + 4 * C * C / r + C + C * hw);
}

inline std::uint64_t se_flops_hook(std::uint64_t C, std::uint64_t H, std::uint64_t W, std::uint64_t r,
                                   std::uint64_t N = 1) {
  check_se(C, r);
  return N * (C * H * W + 2 * C * C / r);
}

// Cost of the two FC layers alone; spatial terms need H, W (see se_flops_*).
inline Cost se_cost(std::uint64_t C, std::uint64_t r = 16, bool with_bias = false) {
  return {se_params(C, r, with_bias), 4 * C * C / r};
}

// ---------------------------------------------------------------------------
// Backbone.

// Parameters and layer-hook FLOPs of a torchvision-style bottleneck ResNet
// (stride on the 3x3 conv, projection shortcut on the first block of a stage,
// batch norm with affine terms, final FC with bias).
inline Cost backbone_cost(const ModelDescriptor& d) {
  d.validate();
  Cost c;
  auto conv = [&](std::uint64_t cin, std::uint64_t cout, std::uint64_t kernel, std::uint64_t out_hw) {
    c.params += cin * cout * kernel * kernel;
    c.flops += out_hw * out_hw * cout * cin * kernel * kernel;
  };
  auto bn = [&](std::uint64_t ch) { c.params += 2 * ch; };
  const std::uint64_t stem_hw = d.input_size / 2;
  conv(3, d.stem_channels, 7, stem_hw);
  bn(d.stem_channels);
  c.flops += stem_hw * stem_hw * d.stem_channels;  // max pool
  std::uint64_t in_ch = d.stem_channels;
  std::uint64_t in_hw = d.input_size / 4;
  for (const auto& s : d.stages) {
    const std::uint64_t width = s.channels / 4;
    for (std::size_t b = 0; b < s.blocks; ++b) {
      const std::uint64_t block_in_hw = b == 0 ? in_hw : s.spatial;
      conv(in_ch, width, 1, block_in_hw);
      bn(width);
      conv(width, width, 3, s.spatial);
      bn(width);
      conv(width, s.channels, 1, s.spatial);
      bn(s.channels);
      if (b == 0 && (in_ch != s.channels || in_hw != s.spatial)) {
        conv(in_ch, s.channels, 1, s.spatial);
        bn(s.channels);
      }
      in_ch = s.channels;
    }
    in_hw = s.spatial;
  }
  c.flops += in_hw * in_hw * in_ch;  // global average pool
  c.params += in_ch * d.classes + d.classes;
  c.flops += in_ch * d.classes;
  return c;
}

// ---------------------------------------------------------------------------
// Reports.

enum class AttentionKind { none, sa, se };

struct AttentionSpec {
  AttentionKind kind = AttentionKind::none;
  std::size_t groups = 64;
  std::size_t reduction = 16;
  bool se_bias = false;
  SaConfig sa;  // ablation toggles; sa.groups mirrors `groups`

  // "none", "sa:G" or "se:r".
  static AttentionSpec parse(std::string_view text) {
    AttentionSpec a;
    if (text == "none") return a;
    const auto colon = text.find(':');
    const std::string_view kind = text.substr(0, colon);
    if (colon == std::string_view::npos || (kind != "sa" && kind != "se")) {
      throw ConfigError("attention must be none, sa:G or se:r, got '" + std::string(text) + "'");
    }
    std::size_t value = 0;
    try {
      std::size_t used = 0;
      const std::string digits(text.substr(colon + 1));
      if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
        throw std::invalid_argument("bad");
      }
      value = std::stoul(digits, &used);
      if (used != digits.size() || value == 0) throw std::invalid_argument("bad");
    } catch (const std::exception&) {
      throw ConfigError("attention parameter must be a positive integer in '" + std::string(text) + "'");
    }
    if (kind == "sa") {
      a.kind = AttentionKind::sa;
      a.groups = value;
      a.sa.groups = value;
    } else {
      a.kind = AttentionKind::se;
      a.reduction = value;
    }
    return a;
  }

  std::string str() const {
    switch (kind) {
      case AttentionKind::sa:
        return "sa:" + std::to_string(groups);
      case AttentionKind::se:
        return "se:" + std::to_string(reduction) + (se_bias ? "+bias" : "");
      case AttentionKind::none:
        break;
    }
    return "none";
  }
};

struct StageCost {
  std::size_t index = 0;
  std::size_t blocks = 0;
  std::size_t channels = 0;
  std::size_t spatial = 0;
  std::uint64_t params_added = 0;
  std::uint64_t flops_added_exact = 0;
  std::uint64_t flops_added_hook = 0;
};

struct CostReport {
  std::string model;
  std::string attention;
  std::uint64_t params_base = 0;
  std::uint64_t params_added = 0;
  std::uint64_t flops_base = 0;  // layer-hook convention
  std::uint64_t flops_added_exact = 0;
  std::uint64_t flops_added_hook = 0;
  std::vector<StageCost> stages;
  std::vector<std::string> notes;
};

inline constexpr std::uint64_t kPublishedSaParamsResnet50 = 300;

inline CostReport report(const ModelDescriptor& model, const AttentionSpec& attention) {
  const Cost base = backbone_cost(model);
  CostReport r;
  r.model = model.name;
  r.attention = attention.str();
  r.params_base = base.params;
  r.flops_base = base.flops;
  SaConfig sa = attention.sa;
  sa.groups = attention.groups;
  for (std::size_t i = 0; i < model.stages.size(); ++i) {
    const auto& s = model.stages[i];
    StageCost sc{i, s.blocks, s.channels, s.spatial};
    const std::uint64_t C = s.channels, H = s.spatial, W = s.spatial;
    Cost block{};
    std::uint64_t hook = 0;
    switch (attention.kind) {
      case AttentionKind::sa:
        block = {sa_params(C, sa), sa_flops_exact(C, H, W, sa)};
        hook = sa_flops_hook(C, H, W, sa);
        break;
      case AttentionKind::se:
        block = {se_params(C, attention.reduction, attention.se_bias),
                 se_flops_exact(C, H, W, attention.reduction)};
        hook = se_flops_hook(C, H, W, attention.reduction);
        break;
      case AttentionKind::none:
        break;
    }
    sc.params_added = s.blocks * block.params;
    sc.flops_added_exact = s.blocks * block.flops;
    sc.flops_added_hook = s.blocks * hook;
    r.params_added += sc.params_added;
    r.flops_added_exact += sc.flops_added_exact;
    r.flops_added_hook += sc.flops_added_hook;
    r.stages.push_back(sc);
  }
  r.notes.push_back("flops_base and flops_added_hook: layer-hook convention (conv/linear multiply-accumulates "
                    "+ one op per pooling input; norms, activations, elementwise products free)");
  r.notes.push_back("flops_added_exact: every scalar add/sub/mul/div/sqrt/sigmoid counted once "
                    "(multiply-add = 2)");
  if (attention.kind == AttentionKind::sa && model.name == "resnet50" && attention.groups == 64 &&
      r.params_added != kPublishedSaParamsResnet50) {
    r.notes.push_back("discrepancy: the published figure for ResNet-50 + SA (G=64) is " +
                      std::to_string(kPublishedSaParamsResnet50) + " added parameters; summing 3C/G over all " +
                      std::to_string(model.block_count()) + " bottleneck outputs gives " +
                      std::to_string(r.params_added) + " (not reconciled, formula value reported)");
  }
  return r;
}

inline nlohmann::json to_json(const CostReport& r) {
  auto stages = nlohmann::json::array();
  for (const auto& s : r.stages) {
    stages.push_back({{"stage", s.index},
                      {"blocks", s.blocks},
                      {"channels", s.channels},
                      {"spatial", s.spatial},
                      {"params_added", s.params_added},
                      {"flops_added_exact", s.flops_added_exact},
                      {"flops_added_hook", s.flops_added_hook}});
  }
  return {{"model", r.model},
          {"attention", r.attention},
          {"params_base", r.params_base},
          {"params_added", r.params_added},
          {"params_total", r.params_base + r.params_added},
          {"flops_base", r.flops_base},
          {"flops_added_exact", r.flops_added_exact},
          {"flops_added_hook", r.flops_added_hook},
          {"gflops_base", static_cast<double>(r.flops_base) * 1e-9},
          {"gflops_added_exact", static_cast<double>(r.flops_added_exact) * 1e-9},
          {"gflops_added_hook", static_cast<double>(r.flops_added_hook) * 1e-9},
          {"stages", stages},
          {"notes", r.notes}};
}

inline std::string to_table(const CostReport& r) {
  std::ostringstream os;
  char line[200];
  std::snprintf(line, sizeof(line), "model %s, attention %s\n", r.model.c_str(), r.attention.c_str());
  os << line;
  std::snprintf(line, sizeof(line), "%-6s %6s %8s %8s %12s %16s %16s\n", "stage", "blocks", "channels",
                "spatial", "params_added", "flops_exact", "flops_hook");
  os << line;
  for (const auto& s : r.stages) {
    std::snprintf(line, sizeof(line), "%-6zu %6zu %8zu %8zu %12llu %16llu %16llu\n", s.index, s.blocks,
                  s.channels, s.spatial, static_cast<unsigned long long>(s.params_added),
                  static_cast<unsigned long long>(s.flops_added_exact),
                  static_cast<unsigned long long>(s.flops_added_hook));
    os << line;
  }
  std::snprintf(line, sizeof(line), "params: base %llu (%.3fM), added %llu, total %.3fM\n",
                static_cast<unsigned long long>(r.params_base), static_cast<double>(r.params_base) * 1e-6,
                static_cast<unsigned long long>(r.params_added),
                static_cast<double>(r.params_base + r.params_added) * 1e-6);
  os << line;
  std::snprintf(line, sizeof(line), "GFLOPs: base %.3f, added %.3e (hook) / %.3e (exact)\n",
                static_cast<double>(r.flops_base) * 1e-9, static_cast<double>(r.flops_added_hook) * 1e-9,
                static_cast<double>(r.flops_added_exact) * 1e-9);
  os << line;
  for (const auto& n : r.notes) os << "note: " << n << '\n';
  return os.str();
}

}  // namespace satt::accounting
