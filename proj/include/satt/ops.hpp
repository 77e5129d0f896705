#pragma once

#include <cmath>
#include <cstring>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "satt/tensor.hpp"

namespace satt {

template <std::floating_point T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Channel-axis restructuring.

template <std::floating_point T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& x, std::size_t parts) {
  if (parts == 0 || x.c() % parts != 0) {
    throw ShapeError("split_channels: channel count c=" + std::to_string(x.c()) +
                     " is not divisible by parts=" + std::to_string(parts));
  }
  const std::size_t width = x.c() / parts;
  const std::size_t plane = x.shape().spatial();
  std::vector<Tensor4<T>> out;
  out.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    Tensor4<T> part(Shape4{x.n(), width, x.h(), x.w()});
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* src = x.data().data() + x.offset(n, p * width, 0, 0);
      std::copy(src, src + width * plane, part.data().data() + part.offset(n, 0, 0, 0));
    }
    out.push_back(std::move(part));
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty part list");
  const Shape4 first = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape4& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: part shape " + s.str() + " does not match " + first.str() +
                       " in n/h/w");
    }
    channels += s.c;
  }
  Tensor4<T> out(Shape4{first.n, channels, first.h, first.w});
  const std::size_t plane = first.spatial();
  for (std::size_t n = 0; n < first.n; ++n) {
    T* dst = out.data().data() + out.offset(n, 0, 0, 0);
    for (const auto& p : parts) {
      const T* src = p.data().data() + p.offset(n, 0, 0, 0);
      dst = std::copy(src, src + p.c() * plane, dst);
    }
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> concat_channels(const std::vector<Tensor4<T>>& parts) {
  return concat_channels(std::span<const Tensor4<T>>(parts));
}

// source_channel[j] is the input channel that lands at output channel j when
// the channels are viewed as a (groups, c/groups) grid and transposed.
inline std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ShapeError("channel_shuffle: channel count c=" + std::to_string(channels) +
                     " is not divisible by g=" + std::to_string(groups));
  }
  const std::size_t per_group = channels / groups;
  std::vector<std::size_t> source(channels);
  for (std::size_t r = 0; r < groups; ++r) {
    for (std::size_t s = 0; s < per_group; ++s) source[s * groups + r] = r * per_group + s;
  }
  return source;
}

template <std::floating_point T>
Tensor4<T> permute_channels(const Tensor4<T>& x, std::span<const std::size_t> source) {
  if (source.size() != x.c()) throw ShapeError("permute_channels: permutation length mismatch");
  Tensor4<T> out(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t j = 0; j < x.c(); ++j) {
      auto src = x.plane(n, source[j]);
      std::copy(src.begin(), src.end(), out.plane(n, j).begin());
    }
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> channel_shuffle(const Tensor4<T>& x, std::size_t groups) {
  const auto source = shuffle_permutation(x.c(), groups);
  return permute_channels(x, std::span<const std::size_t>(source));
}

// Inverse of channel_shuffle(x, groups): the transpose of a (c/g, g) grid.
template <std::floating_point T>
Tensor4<T> channel_unshuffle(const Tensor4<T>& x, std::size_t groups) {
  if (groups == 0 || x.c() % groups != 0) {
    throw ShapeError("channel_unshuffle: channel count c=" + std::to_string(x.c()) +
                     " is not divisible by g=" + std::to_string(groups));
  }
  return channel_shuffle(x, x.c() / groups);
}

// ---------------------------------------------------------------------------
// Pointwise arithmetic.

enum class Elementwise { add, mul };

template <std::floating_point T>
Tensor4<T> elementwise(const Tensor4<T>& a, const Tensor4<T>& b, Elementwise op) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor4<T> out(a.shape());
  auto da = a.data();
  auto db = b.data();
  auto dout = out.data();
  if (op == Elementwise::add) {
    for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] + db[i];
  } else {
    for (std::size_t i = 0; i < dout.size(); ++i) dout[i] = da[i] * db[i];
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  return elementwise(a, b, Elementwise::add);
}

template <std::floating_point T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  return elementwise(a, b, Elementwise::mul);
}

template <std::floating_point T>
Tensor4<T> scale(const Tensor4<T>& x, T factor) {
  Tensor4<T> out(x);
  for (auto& v : out.data()) v *= factor;
  return out;
}

// w[ch] * x + b[ch], broadcast over n, h, w.
template <std::floating_point T>
Tensor4<T> scale_shift(const Tensor4<T>& x, std::span<const T> w, std::span<const T> b) {
  if (w.size() != x.c() || b.size() != x.c()) {
    throw ShapeError("scale_shift: vector lengths " + std::to_string(w.size()) + "/" +
                     std::to_string(b.size()) + " do not match c=" + std::to_string(x.c()));
  }
  Tensor4<T> out(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = w[c] * src[i] + b[c];
    }
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid(src[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Spatial statistics. Sums run in double in a fixed order and are rounded
// once, so the result does not depend on how callers tile the work.

template <std::floating_point T>
double plane_mean(std::span<const T> plane) {
  double acc = 0.0;
  for (T v : plane) acc += static_cast<double>(v);
  return acc / static_cast<double>(plane.size());
}

// Biased (divide by h*w) second central moment.
template <std::floating_point T>
double plane_variance(std::span<const T> plane, double mean) {
  double acc = 0.0;
  for (T v : plane) {
    const double d = static_cast<double>(v) - mean;
    acc += d * d;
  }
  return acc / static_cast<double>(plane.size());
}

// Returns an (n, c, 1, 1) tensor of per-plane means.
template <std::floating_point T>
Tensor4<T> mean_spatial(const Tensor4<T>& x) {
  Tensor4<T> out(Shape4{x.n(), x.c(), 1, 1});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) out(n, c, 0, 0) = static_cast<T>(plane_mean(x.plane(n, c)));
  }
  return out;
}

template <std::floating_point T>
Tensor4<T> var_spatial(const Tensor4<T>& x, const Tensor4<T>& mean) {
  if (mean.shape() != Shape4{x.n(), x.c(), 1, 1}) {
    throw ShapeError("var_spatial: mean shape " + mean.shape().str() + " does not match " +
                     x.shape().str());
  }
  Tensor4<T> out(mean.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      out(n, c, 0, 0) =
          static_cast<T>(plane_variance(x.plane(n, c), static_cast<double>(mean(n, c, 0, 0))));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison helpers.

template <std::floating_point T>
bool bit_equal(const Tensor4<T>& a, const Tensor4<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <std::floating_point T, std::floating_point U>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<U>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (std::isnan(d)) return d;
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace satt
