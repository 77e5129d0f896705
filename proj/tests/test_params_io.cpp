#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "satt/grad/gradcheck.hpp"
#include "satt/params_io.hpp"

using satt::SaParams;

namespace {

SaParams<double> random_params(satt::FcVariant v = satt::FcVariant::affine) {
  satt::Rng rng(31);
  return satt::grad::random_sa_params<double>(24, 3, v, rng);
}

bool same(const SaParams<double>& a, const SaParams<double>& b) {
  return a.channels == b.channels && a.groups == b.groups && a.variant == b.variant && a.w1 == b.w1 &&
         a.b1 == b.b1 && a.w2 == b.w2 && a.b2 == b.b2 && a.gn_gamma == b.gn_gamma && a.gn_beta == b.gn_beta;
}

}  // namespace

TEST(ParamsIo, HexfloatRoundTripIsExact) {
  for (auto v : {satt::FcVariant::affine, satt::FcVariant::conv1x1}) {
    const auto p = random_params(v);
    const auto doc = satt::sa_params_to_json(p);
    EXPECT_EQ(doc.at("encoding"), "hexfloat");
    EXPECT_TRUE(same(satt::sa_params_from_json<double>(nlohmann::json::parse(doc.dump())), p));
  }
}

TEST(ParamsIo, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "satt_test_params.json";
  const auto p = random_params();
  satt::save_sa_params(path.string(), p);
  EXPECT_TRUE(same(satt::load_sa_params<double>(path.string()), p));
  std::filesystem::remove(path);
}

TEST(ParamsIo, AcceptsDecimalNumbersAndStrings) {
  nlohmann::json doc = satt::sa_params_to_json(SaParams<double>::init(4, 1));
  doc["w1"] = {0.25, "-1.5"};
  const auto p = satt::sa_params_from_json<double>(doc);
  EXPECT_EQ(p.w1, (std::vector<double>{0.25, -1.5}));
}

TEST(ParamsIo, RejectsMalformedDocuments) {
  const nlohmann::json good = satt::sa_params_to_json(SaParams<double>::init(8, 2));
  auto expect_bad = [](nlohmann::json doc) {
    EXPECT_THROW(satt::sa_params_from_json<double>(doc), satt::FormatError) << doc.dump();
  };

  auto short_vec = good;
  short_vec["b1"].erase(0);
  expect_bad(short_vec);

  auto non_numeric = good;
  non_numeric["w2"][0] = true;
  expect_bad(non_numeric);

  auto garbage = good;
  garbage["w2"][0] = "1.0abc";
  expect_bad(garbage);

  auto no_c = good;
  no_c.erase("C");
  expect_bad(no_c);

  auto zero_g = good;
  zero_g["G"] = 0;
  expect_bad(zero_g);

  auto indivisible = good;
  indivisible["G"] = 3;
  expect_bad(indivisible);

  auto bad_variant = good;
  bad_variant["fc_variant"] = "dense";
  expect_bad(bad_variant);

  auto missing = good;
  missing.erase("gn_beta");
  expect_bad(missing);

  expect_bad(nlohmann::json::array());
}

TEST(ParamsIo, UnreadableFileIsFormatError) {
  const auto path = std::filesystem::temp_directory_path() / "satt_test_params_bad.json";
  std::ofstream(path) << "{ not json";
  EXPECT_THROW(satt::load_sa_params<float>(path.string()), satt::FormatError);
  std::filesystem::remove(path);
  EXPECT_THROW(satt::load_sa_params<float>(path.string()), satt::FormatError);
}
