#pragma once

// SATK v1 tensor files:
//   bytes 0..7    magic "SATK0001"
//   bytes 8..23   n, c, h, w as uint32 little-endian
//   bytes 24..    n*c*h*w IEEE-754 binary32 little-endian values, NCHW order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "satt/tensor.hpp"

namespace satt {

inline constexpr std::string_view kSatkMagic = "SATK0001";
inline constexpr std::size_t kSatkHeaderBytes = 8 + 4 * 4;

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_satk(const Tensor4f& t) {
  const Shape4& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > 0xFFFFFFFFu) throw FormatError("SATK: dimension exceeds uint32 range: " + s.str());
  }
  std::vector<unsigned char> out;
  out.reserve(kSatkHeaderBytes + 4 * t.size());
  out.insert(out.end(), kSatkMagic.begin(), kSatkMagic.end());
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Tensor4f decode_satk(std::span<const unsigned char> bytes) {
  if (bytes.size() < kSatkHeaderBytes) {
    throw FormatError("SATK: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kSatkMagic.data(), kSatkMagic.size()) != 0) {
    throw FormatError("SATK: bad magic");
  }
  std::array<std::uint64_t, 4> dims{};
  for (std::size_t i = 0; i < 4; ++i) dims[i] = detail::get_u32(bytes.data() + 8 + 4 * i);
  std::uint64_t count = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw FormatError("SATK: zero dimension in header");
    // 2^62 / 4 bytes keeps the payload size representable.
    if (count > (std::uint64_t{1} << 60) / d) throw FormatError("SATK: dimension product overflows");
    count *= d;
  }
  const std::uint64_t expected = kSatkHeaderBytes + 4 * count;
  if (bytes.size() < expected) {
    throw FormatError("SATK: truncated payload, expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError("SATK: " + std::to_string(bytes.size() - expected) + " trailing bytes");
  }
  std::vector<float> data(count);
  const unsigned char* p = bytes.data() + kSatkHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(detail::get_u32(p + 4 * i));
  return Tensor4f(Shape4{dims[0], dims[1], dims[2], dims[3]}, std::move(data));
}

inline void write_satk(const std::string& path, const Tensor4f& t) {
  const auto bytes = encode_satk(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("SATK: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("SATK: write failed for '" + path + "'");
}

inline Tensor4f read_satk(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("SATK: cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_satk(bytes);
}

// FNV-1a over the encoded payload bytes; printed by the CLI as a checksum.
inline std::uint64_t payload_fnv1a(const Tensor4f& t) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (float v : t.data()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      hash ^= (bits >> (8 * i)) & 0xFFu;
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

}  // namespace satt
