// Writes the golden fixtures under tests/data. Expected outputs come from
// the scalar-loop reference evaluated in double precision, never from the
// optimised kernels.
//
//   satt_make_golden --out tests/data [--seed 7]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "satt/grad/gradcheck.hpp"
#include "satt/params_io.hpp"
#include "satt/satk.hpp"
#include "satt/testing/reference.hpp"

namespace {

struct Fixture {
  std::string name;
  satt::Shape4 shape;
  std::size_t groups;
  std::string variant;
};

const Fixture kFixtures[] = {
    {"origin", {2, 16, 5, 4}, 4, "origin"},
    {"minimal_width", {1, 8, 3, 3}, 4, "origin"},
    {"wo_gn", {1, 12, 4, 4}, 3, "wo_gn"},
    {"wo_shuffle", {1, 16, 3, 5}, 2, "wo_shuffle"},
    {"wo_fc", {2, 8, 4, 3}, 2, "wo_fc"},
    {"conv1x1", {1, 24, 4, 4}, 2, "conv1x1"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate golden shuffle-attention fixtures from the scalar reference"};
  std::string out = "tests/data";
  std::uint64_t seed = 7;
  app.add_option("--out", out, "Output directory")->capture_default_str();
  app.add_option("--seed", seed, "Fixture seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    std::filesystem::create_directories(out);
    const std::filesystem::path dir(out);
    nlohmann::json manifest = nlohmann::json::array();
    satt::Rng root(seed);
    std::uint64_t stream = 0;
    for (const auto& f : kFixtures) {
      satt::Rng rng = root.split(stream++);
      const satt::SaConfig cfg = satt::SaConfig::variant(f.variant, f.groups);
      const satt::Tensor4f x = satt::random_normal<float>(f.shape, rng);
      const auto params = satt::grad::random_sa_params<float>(f.shape.c, f.groups, cfg.fc_variant, rng);
      const satt::Tensor4d expected =
          satt::testing::ref_sa_forward(satt::Tensor4d::cast(x), params.cast<double>(), cfg);

      const std::string stem = "golden_" + f.name;
      satt::write_satk((dir / (stem + "_input.satk")).string(), x);
      satt::save_sa_params((dir / (stem + "_params.json")).string(), params);
      satt::write_satk((dir / (stem + "_expected.satk")).string(), satt::Tensor4f::cast(expected));
      manifest.push_back({{"name", f.name},
                          {"shape", {f.shape.n, f.shape.c, f.shape.h, f.shape.w}},
                          {"groups", f.groups},
                          {"variant", f.variant},
                          {"input", stem + "_input.satk"},
                          {"params", stem + "_params.json"},
                          {"expected", stem + "_expected.satk"}});
      std::printf("%-14s %s G=%zu %s\n", f.name.c_str(), f.shape.str().c_str(), f.groups, f.variant.c_str());
    }
    std::ofstream(dir / "golden.json") << nlohmann::json{{"seed", seed}, {"fixtures", manifest}}.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
