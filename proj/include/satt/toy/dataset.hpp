#pragma once

// Seeded synthetic classification data: oriented bar gratings, one
// orientation per class, with random period, phase, contrast and additive
// Gaussian noise. Sample i has label i % classes and is generated from the
// generator stream split(i), so any sample can be produced independently.
// Indices [0, train_size) form the training split, the next val_size
// indices the validation split.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "satt/error.hpp"
#include "satt/rng.hpp"
#include "satt/tensor.hpp"

namespace satt::toy {

struct Sample {
  Tensor4f image;  // (1, 1, size, size)
  int label = 0;
};

enum class Split { train, val };

struct SyntheticDataset {
  std::uint64_t seed = 0;
  std::size_t classes = 4;
  std::size_t train_size = 256;
  std::size_t val_size = 128;
  std::size_t image_size = 32;
  double noise_sigma = 0.5;

  void validate() const {
    if (classes < 2) throw ConfigError("dataset needs at least 2 classes, got " + std::to_string(classes));
    if (train_size == 0) throw ConfigError("dataset train_size must be positive");
    if (image_size < 4) throw ConfigError("dataset image_size must be at least 4");
    if (!(noise_sigma >= 0.0)) throw ConfigError("dataset noise_sigma must be non-negative");
  }

  std::size_t size(Split s) const { return s == Split::train ? train_size : val_size; }
  std::size_t first_index(Split s) const { return s == Split::train ? 0 : train_size; }

  int label_of(std::size_t index) const { return static_cast<int>(index % classes); }

  Sample sample(std::size_t index) const {
    Rng rng = Rng(seed).split(index);
    const int label = label_of(index);
    const double angle = std::numbers::pi * static_cast<double>(label) / static_cast<double>(classes) +
                         rng.uniform(-0.08, 0.08);
    const double period = rng.uniform(4.0, 8.0);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double contrast = rng.uniform(0.7, 1.3);
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    const double centre = 0.5 * static_cast<double>(image_size - 1);
    Tensor4f img(Shape4{1, 1, image_size, image_size});
    for (std::size_t y = 0; y < image_size; ++y) {
      for (std::size_t x = 0; x < image_size; ++x) {
        const double u = (static_cast<double>(x) - centre) * ca + (static_cast<double>(y) - centre) * sa;
        const double wave = std::cos(2.0 * std::numbers::pi * u / period + phase);
        const double bar = wave > 0.0 ? contrast : -contrast;
        img(0, 0, y, x) = static_cast<float>(bar + rng.normal(0.0, noise_sigma));
      }
    }
    return Sample{std::move(img), label};
  }

  std::vector<Sample> split(Split s) const {
    std::vector<Sample> out;
    out.reserve(size(s));
    for (std::size_t i = 0; i < size(s); ++i) out.push_back(sample(first_index(s) + i));
    return out;
  }
};

// Stacks samples[order[begin..end)] into one (n, 1, size, size) batch.
inline Tensor4f stack_images(const std::vector<Sample>& samples, const std::vector<std::size_t>& order,
                             std::size_t begin, std::size_t end, std::vector<int>& labels) {
  if (begin >= end) throw ShapeError("stack_images: empty batch");
  const Shape4 one = samples[order[begin]].image.shape();
  Tensor4f batch(Shape4{end - begin, one.c, one.h, one.w});
  labels.clear();
  const std::size_t per = one.size();
  for (std::size_t i = begin; i < end; ++i) {
    const Sample& s = samples[order[i]];
    if (s.image.shape() != one) throw ShapeError("stack_images: mixed sample shapes");
    std::copy(s.image.data().begin(), s.image.data().end(), batch.data().begin() + (i - begin) * per);
    labels.push_back(s.label);
  }
  return batch;
}

}  // namespace satt::toy
