#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "satt/ops.hpp"
#include "satt/rng.hpp"

using satt::Shape4;
using satt::Tensor4d;
using satt::Tensor4f;

namespace {

// Channel c of every sample is filled with the value c.
Tensor4f channel_ids(std::size_t n, std::size_t c, std::size_t hw = 2) {
  Tensor4f t(Shape4{n, c, hw, hw});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      for (auto& v : t.plane(i, j)) v = static_cast<float>(j);
    }
  }
  return t;
}

std::vector<int> channel_order(const Tensor4f& t) {
  std::vector<int> ids;
  for (std::size_t j = 0; j < t.c(); ++j) ids.push_back(static_cast<int>(t(0, j, 0, 0)));
  return ids;
}

}  // namespace

TEST(ChannelShuffle, WorkedExampleSixChannelsTwoGroups) {
  const Tensor4f y = satt::channel_shuffle(channel_ids(1, 6), 2);
  EXPECT_EQ(channel_order(y), (std::vector<int>{0, 3, 1, 4, 2, 5}));
}

TEST(ChannelShuffle, TransposesTheGroupGrid) {
  // (3, 4) grid of channels read column-major.
  const Tensor4f y = satt::channel_shuffle(channel_ids(2, 12), 3);
  EXPECT_EQ(channel_order(y), (std::vector<int>{0, 4, 8, 1, 5, 9, 2, 6, 10, 3, 7, 11}));
}

TEST(ChannelShuffle, InverseIsShuffleWithComplementaryGroups) {
  satt::Rng rng(3);
  for (std::size_t g : {1u, 2u, 3u, 4u, 6u, 12u}) {
    const Tensor4f x = satt::random_normal<float>(Shape4{2, 12, 3, 2}, rng);
    const Tensor4f y = satt::channel_shuffle(x, g);
    EXPECT_TRUE(satt::bit_equal(satt::channel_unshuffle(y, g), x)) << "g=" << g;
    EXPECT_TRUE(satt::bit_equal(satt::channel_shuffle(y, 12 / g), x)) << "g=" << g;
  }
}

TEST(ChannelShuffle, RejectsNonDividingGroups) {
  EXPECT_THROW(satt::channel_shuffle(channel_ids(1, 6), 4), satt::ShapeError);
  EXPECT_THROW(satt::channel_shuffle(channel_ids(1, 6), 0), satt::ShapeError);
}

TEST(SplitConcat, RoundTripIsBitExact) {
  satt::Rng rng(11);
  const Tensor4f x = satt::random_normal<float>(Shape4{3, 12, 2, 5}, rng);
  for (std::size_t parts : {1u, 2u, 3u, 4u, 6u, 12u}) {
    const auto pieces = satt::split_channels(x, parts);
    ASSERT_EQ(pieces.size(), parts);
    for (const auto& p : pieces) EXPECT_EQ(p.shape(), (Shape4{3, 12 / parts, 2, 5}));
    EXPECT_TRUE(satt::bit_equal(satt::concat_channels(pieces), x));
  }
  EXPECT_THROW(satt::split_channels(x, 5), satt::ShapeError);
}

TEST(SplitConcat, PiecesAreContiguousChannelRanges) {
  const auto pieces = satt::split_channels(channel_ids(2, 8), 4);
  EXPECT_EQ(channel_order(pieces[2]), (std::vector<int>{4, 5}));
}

TEST(Sigmoid, KnownValues) {
  EXPECT_DOUBLE_EQ(satt::sigmoid(0.0), 0.5);
  EXPECT_NEAR(satt::sigmoid(1.0), 0.7310585786300049, 1e-15);
  EXPECT_NEAR(satt::sigmoid(-1.0), 1.0 - 0.7310585786300049, 1e-15);
  EXPECT_EQ(satt::sigmoid(-1000.0), 0.0);
  EXPECT_EQ(satt::sigmoid(1000.0), 1.0);
}

TEST(Statistics, PlaneMeanAndBiasedVariance) {
  const std::vector<float> p = {1.0f, 2.0f, 4.0f, 9.0f};
  const double mean = satt::plane_mean(std::span<const float>(p));
  EXPECT_DOUBLE_EQ(mean, 4.0);
  // ((-3)^2 + (-2)^2 + 0 + 5^2) / 4 = 38 / 4.
  EXPECT_DOUBLE_EQ(satt::plane_variance(std::span<const float>(p), mean), 9.5);
}

TEST(Statistics, MeanSpatialShape) {
  const Tensor4d x(Shape4{2, 3, 4, 4}, 2.5);
  const Tensor4d m = satt::mean_spatial(x);
  EXPECT_EQ(m.shape(), (Shape4{2, 3, 1, 1}));
  for (double v : m.data()) EXPECT_DOUBLE_EQ(v, 2.5);
}

TEST(Elementwise, ScaleShiftIsPerChannel) {
  const Tensor4d x(Shape4{1, 2, 1, 2}, std::vector<double>{1, 2, 3, 4});
  const std::vector<double> w = {2, -1}, b = {0.5, 1};
  const Tensor4d y = satt::scale_shift(x, std::span<const double>(w), std::span<const double>(b));
  EXPECT_EQ(y.vec(), (std::vector<double>{2.5, 4.5, -2, -3}));
}

TEST(Elementwise, ShapeMismatchThrows) {
  EXPECT_THROW(satt::add(Tensor4f(Shape4{1, 2, 2, 2}), Tensor4f(Shape4{1, 2, 2, 1})), satt::ShapeError);
}

TEST(Compare, MaxAbsDiffPropagatesNaN) {
  Tensor4f a(Shape4{1, 1, 1, 3}, 1.0f), b(Shape4{1, 1, 1, 3}, 1.0f);
  EXPECT_EQ(satt::max_abs_diff(a, b), 0.0);
  b[2] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_TRUE(std::isnan(satt::max_abs_diff(a, b)));
}
