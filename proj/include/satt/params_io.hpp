#pragma once

// SaParams JSON documents:
//   {"C": 64, "G": 8, "fc_variant": "affine", "encoding": "hexfloat",
//    "w1": ["0x0p+0", ...], "b1": [...], "w2": [...], "b2": [...],
//    "gn_gamma": [...], "gn_beta": [...]}
// Values are C99 hex-float strings so binary floats round-trip exactly.
// The loader also accepts plain JSON numbers.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "satt/attention.hpp"

namespace satt {

inline std::string to_hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double parse_float_text(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw FormatError("not a floating-point literal: '" + s + "'");
  return v;
}

template <std::floating_point T>
nlohmann::json hexfloat_array(const std::vector<T>& v) {
  auto arr = nlohmann::json::array();
  for (T x : v) arr.push_back(to_hexfloat(static_cast<double>(x)));
  return arr;
}

template <std::floating_point T>
std::vector<T> read_float_array(const nlohmann::json& doc, const char* key) {
  if (!doc.contains(key) || !doc.at(key).is_array()) {
    throw FormatError(std::string("missing array '") + key + "'");
  }
  std::vector<T> out;
  for (const auto& item : doc.at(key)) {
    if (item.is_string()) {
      out.push_back(static_cast<T>(parse_float_text(item.get<std::string>())));
    } else if (item.is_number()) {
      out.push_back(static_cast<T>(item.get<double>()));
    } else {
      throw FormatError(std::string("array '") + key + "' holds a non-numeric entry");
    }
  }
  return out;
}

template <std::floating_point T>
nlohmann::json sa_params_to_json(const SaParams<T>& p) {
  return nlohmann::json{
      {"C", p.channels},
      {"G", p.groups},
      {"fc_variant", std::string(to_string(p.variant))},
      {"encoding", "hexfloat"},
      {"w1", hexfloat_array(p.w1)},
      {"b1", hexfloat_array(p.b1)},
      {"w2", hexfloat_array(p.w2)},
      {"b2", hexfloat_array(p.b2)},
      {"gn_gamma", hexfloat_array(p.gn_gamma)},
      {"gn_beta", hexfloat_array(p.gn_beta)},
  };
}

template <std::floating_point T>
SaParams<T> sa_params_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("SaParams document must be a JSON object");
  auto dim = [&](const char* key) -> std::size_t {
    if (!doc.contains(key) || !doc.at(key).is_number_integer() || doc.at(key).get<long long>() <= 0) {
      throw FormatError(std::string("SaParams: '") + key + "' must be a positive integer");
    }
    return doc.at(key).get<std::size_t>();
  };
  SaParams<T> p;
  p.channels = dim("C");
  p.groups = dim("G");
  if (doc.contains("fc_variant")) {
    try {
      p.variant = parse_fc_variant(doc.at("fc_variant").get<std::string>());
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    } catch (const nlohmann::json::exception&) {
      throw FormatError("SaParams: 'fc_variant' must be a string");
    }
  }
  if (p.channels % (2 * p.groups) != 0) {
    throw FormatError("SaParams: C=" + std::to_string(p.channels) + " not divisible by 2*G, G=" +
                      std::to_string(p.groups));
  }
  p.w1 = read_float_array<T>(doc, "w1");
  p.b1 = read_float_array<T>(doc, "b1");
  p.w2 = read_float_array<T>(doc, "w2");
  p.b2 = read_float_array<T>(doc, "b2");
  p.gn_gamma = read_float_array<T>(doc, "gn_gamma");
  p.gn_beta = read_float_array<T>(doc, "gn_beta");
  try {
    p.validate();
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
  return p;
}

template <std::floating_point T>
void save_sa_params(const std::string& path, const SaParams<T>& p) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << sa_params_to_json(p).dump(2) << '\n';
  if (!out) throw FormatError("write failed for '" + path + "'");
}

template <std::floating_point T>
SaParams<T> load_sa_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return sa_params_from_json<T>(doc);
}

}  // namespace satt
