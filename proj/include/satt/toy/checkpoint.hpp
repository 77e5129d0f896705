#pragma once

// Checkpoint directory layout:
//   manifest.json    model config plus, per parameter, name / shape / offset / count
//   params.bin       all parameters as little-endian binary32, manifest order
//   sa_block<i>.json SaParams JSON of block i (SA networks only)

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satt/params_io.hpp"
#include "satt/toy/net.hpp"

namespace satt::toy {

inline constexpr std::string_view kCheckpointFormat = "satt-toy-checkpoint";

inline void save_checkpoint(const std::filesystem::path& dir, const ToyNet& net) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());

  nlohmann::json manifest{{"format", kCheckpointFormat},
                          {"version", 1},
                          {"dtype", "float32-le"},
                          {"model", to_json(net.config)}};
  auto entries = nlohmann::json::array();
  std::vector<unsigned char> blob;
  std::size_t offset = 0;
  for (const auto& p : net.params) {
    const Shape4& s = p.value.shape();
    entries.push_back({{"name", p.name}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", s.size()}});
    for (float v : p.value.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int i = 0; i < 4; ++i) blob.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu));
    }
    offset += s.size();
  }
  manifest["params"] = entries;

  if (net.config.attention == Attention::sa) {
    auto files = nlohmann::json::array();
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
      const std::string file = "sa_block" + std::to_string(b) + ".json";
      save_sa_params((dir / file).string(), net.sa_params(b));
      files.push_back({{"block", b}, {"file", file}});
    }
    manifest["sa_params"] = files;
  }

  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FormatError("cannot open '" + (dir / "params.bin").string() + "' for writing");
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream man(dir / "manifest.json");
  if (!man) throw FormatError("cannot open '" + (dir / "manifest.json").string() + "' for writing");
  man << manifest.dump(2) << '\n';
  if (!bin || !man) throw FormatError("checkpoint write failed in '" + dir.string() + "'");
}

// Rebuilds the network from the manifest's config and fills every parameter
// from params.bin, checking names and shapes against the rebuilt layout.
inline ToyNet load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.json");
  if (!man) throw FormatError("cannot open '" + (dir / "manifest.json").string() + "'");
  nlohmann::json manifest;
  try {
    man >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  if (!manifest.is_object() || manifest.value("format", "") != kCheckpointFormat) {
    throw FormatError("'" + dir.string() + "' is not a toy checkpoint");
  }
  ToyNet net;
  try {
    net = build(net_config_from_json(manifest.at("model")), Rng(0));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint model config: ") + e.what());
  }

  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FormatError("cannot open '" + (dir / "params.bin").string() + "'");
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (blob.size() != 4 * net.param_count()) {
    throw FormatError("params.bin holds " + std::to_string(blob.size()) + " bytes, expected " +
                      std::to_string(4 * net.param_count()));
  }
  const auto& entries = manifest.at("params");
  if (!entries.is_array() || entries.size() != net.params.size()) {
    throw FormatError("manifest lists a different number of parameters than the model defines");
  }
  for (std::size_t i = 0; i < net.params.size(); ++i) {
    Param& p = net.params[i];
    const auto& e = entries[i];
    const Shape4& s = p.value.shape();
    const std::vector<std::size_t> want{s.n, s.c, s.h, s.w};
    if (e.value("name", "") != p.name || e.at("shape").get<std::vector<std::size_t>>() != want) {
      throw FormatError("manifest entry " + std::to_string(i) + " does not match parameter '" + p.name + "'");
    }
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (offset + s.size() > net.param_count()) throw FormatError("manifest offset out of range for '" + p.name + "'");
    const unsigned char* src = blob.data() + 4 * offset;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const std::uint32_t bits = static_cast<std::uint32_t>(src[4 * j]) |
                                 (static_cast<std::uint32_t>(src[4 * j + 1]) << 8) |
                                 (static_cast<std::uint32_t>(src[4 * j + 2]) << 16) |
                                 (static_cast<std::uint32_t>(src[4 * j + 3]) << 24);
      p.value[j] = std::bit_cast<float>(bits);
    }
  }
  return net;
}

}  // namespace satt::toy
