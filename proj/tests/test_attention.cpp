#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "satt/attention.hpp"
#include "satt/grad/gradcheck.hpp"
#include "satt/params_io.hpp"
#include "satt/satk.hpp"
#include "satt/testing/reference.hpp"

using satt::SaConfig;
using satt::SaParams;
using satt::Shape4;
using satt::Tensor4d;
using satt::Tensor4f;

namespace {

const std::string kData = SATT_TEST_DATA_DIR;

Tensor4f random_input(Shape4 s, std::uint64_t seed) {
  satt::Rng rng(seed);
  return satt::random_normal<float>(s, rng);
}

}  // namespace

TEST(SaParams, InitialValuesAndCount) {
  const auto p = SaParams<float>::init(64, 8);
  EXPECT_EQ(p.branch_width(), 4u);
  EXPECT_EQ(p.count(), 3u * 64 / 8);
  for (float v : p.w1) EXPECT_EQ(v, 0.0f);
  for (float v : p.w2) EXPECT_EQ(v, 0.0f);
  for (float v : p.b1) EXPECT_EQ(v, 1.0f);
  for (float v : p.b2) EXPECT_EQ(v, 1.0f);
  for (float v : p.gn_gamma) EXPECT_EQ(v, 1.0f);
  for (float v : p.gn_beta) EXPECT_EQ(v, 0.0f);
}

TEST(SaParams, CountScalesWithChannelsOverGroups) {
  for (std::size_t C : {8u, 64u, 256u, 2048u}) {
    for (std::size_t G : {1u, 2u, 4u}) {
      EXPECT_EQ(SaParams<double>::init(C, G).count(), 3 * C / G) << "C=" << C << " G=" << G;
    }
  }
  // The mixing variant stores a k x k matrix per branch.
  EXPECT_EQ(SaParams<double>::init(24, 2, satt::FcVariant::conv1x1).count(), 2u * 36 + 4u * 6);
}

TEST(SaParams, IndivisibleChannelsNameBothValues) {
  try {
    (void)SaParams<float>::init(48, 5);
    FAIL() << "expected ConfigError";
  } catch (const satt::ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("C=48"), std::string::npos) << msg;
    EXPECT_NE(msg.find("G=5"), std::string::npos) << msg;
  }
  EXPECT_THROW((void)SaParams<float>::init(12, 0), satt::ConfigError);
  // C divisible by G but not by 2G.
  EXPECT_THROW(SaConfig::variant("origin", 3).validate(9), satt::ConfigError);
}

TEST(SaConfig, VariantNames) {
  EXPECT_FALSE(SaConfig::variant("wo_gn", 4).enable_gn);
  EXPECT_FALSE(SaConfig::variant("wo_shuffle", 4).enable_shuffle);
  EXPECT_FALSE(SaConfig::variant("wo_fc", 4).enable_fc);
  EXPECT_EQ(SaConfig::variant("conv1x1", 4).fc_variant, satt::FcVariant::conv1x1);
  EXPECT_EQ(SaConfig::variant("origin", 4).transform(), satt::GateTransform::affine);
  EXPECT_THROW(SaConfig::variant("wo_everything", 4), satt::ConfigError);
}

TEST(SaForward, InitialisedModuleScalesShuffledInput) {
  const Shape4 s{2, 32, 5, 7};
  const Tensor4f x = random_input(s, 1);
  const SaConfig cfg = SaConfig::variant("origin", 4);
  const Tensor4f y = satt::sa_forward(x, SaParams<float>::init(32, 4), cfg);
  const Tensor4f expect = satt::scale(satt::channel_shuffle(x, 2), satt::sigmoid(1.0f));
  EXPECT_LE(satt::max_abs_diff(y, expect), 1e-6);
}

TEST(SaForward, InitialisedModuleWithoutShuffleScalesInput) {
  const Tensor4f x = random_input(Shape4{1, 16, 4, 4}, 2);
  const Tensor4f y = satt::sa_forward(x, SaParams<float>::init(16, 2), SaConfig::variant("wo_shuffle", 2));
  EXPECT_LE(satt::max_abs_diff(y, satt::scale(x, satt::sigmoid(1.0f))), 1e-6);
}

TEST(SaForward, HandComputedSingleGroup) {
  // C=2, G=1: channel 0 takes the channel branch, channel 1 the spatial one.
  const Tensor4d x(Shape4{1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4});
  auto p = SaParams<double>::init(2, 1);
  p.w1 = {2.0};
  p.b1 = {-1.0};
  p.w2 = {1.0};
  p.b2 = {0.0};
  SaConfig cfg = SaConfig::variant("origin", 1);
  const Tensor4d y = satt::sa_forward(x, p, cfg);

  // Mean 2.5, so the channel logit is 2 * 2.5 - 1 = 4.
  const double gate = 1.0 / (1.0 + std::exp(-4.0));
  // Biased variance of {1,2,3,4} is 1.25.
  const double sd = std::sqrt(1.25 + 1e-5);
  for (int i = 0; i < 4; ++i) {
    const double v = i + 1.0;
    // With two channels and two shuffle groups the permutation is the identity.
    EXPECT_NEAR(y[i], gate * v, 1e-12);
    const double z = (v - 2.5) / sd;
    EXPECT_NEAR(y[4 + i], v / (1.0 + std::exp(-z)), 1e-12);
  }
}

TEST(SaForward, ShuffleIsAppliedLast) {
  const Shape4 s{2, 24, 3, 3};
  const Tensor4f x = random_input(s, 3);
  satt::Rng rng(4);
  const auto p = satt::grad::random_sa_params<float>(24, 3, satt::FcVariant::affine, rng);
  const Tensor4f with = satt::sa_forward(x, p, SaConfig::variant("origin", 3));
  const Tensor4f without = satt::sa_forward(x, p, SaConfig::variant("wo_shuffle", 3));
  EXPECT_TRUE(satt::bit_equal(with, satt::channel_shuffle(without, 2)));
}

TEST(SaForward, SamplesAreIndependent) {
  const Tensor4f x = random_input(Shape4{3, 16, 4, 5}, 5);
  satt::Rng rng(6);
  const auto p = satt::grad::random_sa_params<float>(16, 4, satt::FcVariant::affine, rng);
  const SaConfig cfg = SaConfig::variant("origin", 4);
  const Tensor4f batched = satt::sa_forward(x, p, cfg);
  for (std::size_t n = 0; n < 3; ++n) {
    Tensor4f one(Shape4{1, 16, 4, 5});
    for (std::size_t c = 0; c < 16; ++c) std::ranges::copy(x.plane(n, c), one.plane(0, c).begin());
    const Tensor4f y = satt::sa_forward(one, p, cfg);
    for (std::size_t c = 0; c < 16; ++c) {
      EXPECT_TRUE(std::ranges::equal(y.plane(0, c), batched.plane(n, c))) << "n=" << n << " c=" << c;
    }
  }
}

TEST(SaForward, MatchesScalarReferenceForEveryVariant) {
  std::uint64_t seed = 100;
  for (std::string_view name : satt::kAblationVariants) {
    for (const auto& [shape, groups] : {std::pair{Shape4{2, 16, 5, 3}, std::size_t{2}},
                                        std::pair{Shape4{1, 12, 1, 1}, std::size_t{3}},
                                        std::pair{Shape4{1, 8, 7, 9}, std::size_t{4}}}) {
      const SaConfig cfg = SaConfig::variant(name, groups);
      satt::Rng rng(seed++);
      const Tensor4d x = satt::random_normal<double>(shape, rng);
      const auto p = satt::grad::random_sa_params<double>(shape.c, groups, cfg.fc_variant, rng);
      const Tensor4d fast = satt::sa_forward(x, p, cfg);
      const Tensor4d ref = satt::testing::ref_sa_forward(x, p, cfg);
      EXPECT_LE(satt::max_abs_diff(fast, ref), 1e-12) << name << " " << shape.str();

      const Tensor4f fast32 = satt::sa_forward(Tensor4f::cast(x), p.cast<float>(), cfg);
      EXPECT_LE(satt::max_abs_diff(fast32, ref), 1e-5) << name << " " << shape.str();
    }
  }
}

TEST(SaForward, RejectsMismatchedParameters) {
  const Tensor4f x = random_input(Shape4{1, 16, 2, 2}, 7);
  const SaConfig cfg = SaConfig::variant("origin", 4);
  EXPECT_THROW(satt::sa_forward(x, SaParams<float>::init(16, 2), cfg), satt::ConfigError);
  EXPECT_THROW(satt::sa_forward(x, SaParams<float>::init(32, 4), cfg), satt::ConfigError);
  EXPECT_THROW(satt::sa_forward(x, SaParams<float>::init(16, 4, satt::FcVariant::conv1x1), cfg),
               satt::ConfigError);
  auto bad = SaParams<float>::init(16, 4);
  bad.b2.pop_back();
  EXPECT_THROW(satt::sa_forward(x, bad, cfg), satt::ShapeError);
}

TEST(SaForward, GoldenFixtures) {
  std::ifstream in(kData + "/golden.json");
  ASSERT_TRUE(in) << "missing " << kData << "/golden.json";
  const auto manifest = nlohmann::json::parse(in);
  ASSERT_GE(manifest.at("fixtures").size(), 5u);
  for (const auto& f : manifest.at("fixtures")) {
    const std::string name = f.at("name");
    const Tensor4f x = satt::read_satk(kData + "/" + f.at("input").get<std::string>());
    const Tensor4f expected = satt::read_satk(kData + "/" + f.at("expected").get<std::string>());
    const auto p = satt::load_sa_params<float>(kData + "/" + f.at("params").get<std::string>());
    const SaConfig cfg = SaConfig::variant(f.at("variant").get<std::string>(), f.at("groups").get<std::size_t>());
    const Tensor4f y = satt::sa_forward(x, p, cfg);
    EXPECT_LE(satt::max_abs_diff(y, expected), 1e-5) << name;
  }
}

TEST(SeForward, MatchesScalarReference) {
  satt::Rng rng(8);
  auto p = satt::SeParams<double>::zeros(16, 4);
  for (auto* v : {&p.fc1, &p.b1, &p.fc2, &p.b2}) {
    for (auto& e : *v) e = rng.normal(0.0, 0.7);
  }
  const Tensor4d x = satt::random_normal<double>(Shape4{2, 16, 3, 4}, rng);
  EXPECT_LE(satt::max_abs_diff(satt::se_forward(x, p), satt::testing::ref_se_forward(x, p)), 1e-12);
}

TEST(SeForward, ZeroWeightsHalveTheInput) {
  const Tensor4f x = random_input(Shape4{1, 8, 3, 3}, 9);
  const Tensor4f y = satt::se_forward(x, satt::SeParams<float>::zeros(8, 2));
  EXPECT_LE(satt::max_abs_diff(y, satt::scale(x, 0.5f)), 0.0);
  EXPECT_THROW(satt::SeParams<float>::zeros(8, 3), satt::ConfigError);
}
