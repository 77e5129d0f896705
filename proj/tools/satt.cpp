// satt: command-line front end for the shuffle-attention library.
//
// Exit codes: 0 ok, 1 check failed, 2 file or format error, 3 shape or
// configuration error (including bad command-line flags).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "satt/accounting.hpp"
#include "satt/attention.hpp"
#include "satt/grad/gradcheck.hpp"
#include "satt/params_io.hpp"
#include "satt/satk.hpp"
#include "satt/testing/checks.hpp"
#include "satt/toy/checkpoint.hpp"
#include "satt/toy/train.hpp"

namespace {

using nlohmann::json;

enum Exit { kOk = 0, kCheckFailed = 1, kIoError = 2, kConfigError = 3 };

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool json = false;
};

struct VariantFlags {
  bool no_gn = false;
  bool no_shuffle = false;
  bool no_fc = false;
  bool fc_conv = false;

  void add(CLI::App* cmd) {
    cmd->add_flag("--no-gn", no_gn, "Disable the group norm in the spatial branch");
    cmd->add_flag("--no-shuffle", no_shuffle, "Disable the final channel shuffle");
    auto* nofc = cmd->add_flag("--no-fc", no_fc, "Use the raw statistics as gate logits");
    auto* conv = cmd->add_flag("--fc-conv", fc_conv, "Use a k x k 1x1-conv gate transform");
    nofc->excludes(conv);
  }

  satt::SaConfig config(std::size_t groups) const {
    satt::SaConfig cfg;
    cfg.groups = groups;
    cfg.enable_gn = !no_gn;
    cfg.enable_shuffle = !no_shuffle;
    cfg.enable_fc = !no_fc;
    cfg.fc_variant = fc_conv ? satt::FcVariant::conv1x1 : satt::FcVariant::affine;
    return cfg;
  }
};

std::string checksum(const satt::Tensor4f& t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx", static_cast<unsigned long long>(satt::payload_fnv1a(t)));
  return buf;
}

json shape_json(const satt::Shape4& s) { return {s.n, s.c, s.h, s.w}; }

satt::Shape4 parse_shape(const std::string& text) {
  std::vector<long long> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoll(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw satt::ConfigError("--shape: '" + part + "' is not an integer");
    }
  }
  if (dims.size() != 4) throw satt::ConfigError("--shape expects n,c,h,w, got '" + text + "'");
  try {
    return satt::make_shape(dims[0], dims[1], dims[2], dims[3]);
  } catch (const satt::ShapeError& e) {
    throw satt::ConfigError(std::string("--shape: ") + e.what());
  }
}

void print_tensor_summary(const Globals& g, const char* command, const satt::Tensor4f& t, const std::string& out,
                          json extra = json::object()) {
  if (g.json) {
    json doc{{"command", command}, {"output", out}, {"shape", shape_json(t.shape())}, {"checksum", checksum(t)}};
    doc.update(extra);
    std::cout << doc.dump(2) << '\n';
  } else {
    std::cout << "shape    " << t.shape().str() << '\n'
              << "checksum " << checksum(t) << '\n'
              << "wrote    " << out << '\n';
  }
}

int run_forward(const Globals& g, const std::string& input, std::size_t groups, const std::string& params_path,
                const VariantFlags& flags, const std::string& output) {
  const satt::Tensor4f x = satt::read_satk(input);
  const satt::SaConfig cfg = flags.config(groups);
  cfg.validate(x.c());
  const auto params = params_path.empty() ? satt::SaParams<float>::init(x.c(), groups, cfg.fc_variant)
                                          : satt::load_sa_params<float>(params_path);
  const satt::Tensor4f y = satt::sa_forward(x, params, cfg);
  satt::write_satk(output, y);
  print_tensor_summary(g, "forward", y, output, {{"groups", groups}});
  return kOk;
}

int run_shuffle(const Globals& g, const std::string& input, std::size_t groups, bool inverse,
                const std::string& output) {
  const satt::Tensor4f x = satt::read_satk(input);
  const satt::Tensor4f y = inverse ? satt::channel_unshuffle(x, groups) : satt::channel_shuffle(x, groups);
  satt::write_satk(output, y);
  print_tensor_summary(g, "shuffle", y, output, {{"groups", groups}, {"inverse", inverse}});
  return kOk;
}

int run_gradcheck(const Globals& g, const std::string& shape_text, std::size_t groups, double tol, double step,
                  const VariantFlags& flags) {
  const satt::Shape4 shape = parse_shape(shape_text);
  const satt::SaConfig cfg = flags.config(groups);
  if (!(tol > 0.0)) throw satt::ConfigError("--tol must be positive");
  const auto report = satt::grad::check_sa_gradients(shape, cfg, g.seed, tol, step);
  if (g.json) {
    json doc = satt::grad::to_json(report);
    doc["shape"] = shape_json(shape);
    doc["groups"] = groups;
    doc["seed"] = g.seed;
    std::cout << doc.dump(2) << '\n';
  } else {
    std::cout << "gradcheck shape " << shape.str() << ", G=" << groups << ", seed " << g.seed << '\n'
              << satt::grad::to_table(report);
  }
  return report.pass ? kOk : kCheckFailed;
}

int run_cost(const Globals& g, const std::string& model, const std::string& attention, bool se_bias,
             const VariantFlags& flags) {
  namespace acc = satt::accounting;
  acc::ModelDescriptor desc;
  if (model == "resnet50" || model == "resnet101") {
    desc = acc::preset(model);
  } else if (std::filesystem::exists(model)) {
    desc = acc::load_descriptor(model);
  } else {
    throw satt::FormatError("--model: '" + model + "' is neither a preset (resnet50, resnet101) nor a file");
  }
  acc::AttentionSpec spec = acc::AttentionSpec::parse(attention);
  spec.se_bias = se_bias;
  spec.sa = flags.config(spec.groups);
  const acc::CostReport rep = acc::report(desc, spec);
  if (g.json) {
    std::cout << acc::to_json(rep).dump(2) << '\n';
  } else {
    std::cout << acc::to_table(rep);
  }
  return kOk;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw satt::FormatError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw satt::FormatError("'" + path + "': " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw satt::FormatError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw satt::FormatError("write failed for '" + path.string() + "'");
}

int run_train(const Globals& g, const std::string& config_path, const std::string& out_dir, bool ablation,
              std::size_t epochs_override) {
  namespace toy = satt::toy;
  toy::RunConfig rc = config_path.empty() ? toy::run_config_from_json(json::object())
                                          : toy::run_config_from_json(load_json_file(config_path));
  if (g.seed_given) rc.set_seed(g.seed);
  if (epochs_override > 0) rc.train.epochs = epochs_override;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw satt::FormatError("cannot create '" + out_dir + "': " + ec.message());
  const std::filesystem::path dir(out_dir);

  auto epoch_line = [&](const toy::EpochStats& e) {
    if (!g.json) {
      std::printf("%5zu  %9.3g  %8.4f  %9.3f  %7.3f\n", e.epoch, e.lr, e.loss, e.train_acc, e.val_acc);
      std::fflush(stdout);
    }
  };

  json doc{{"command", "train"}, {"config", toy::to_json(rc)}};
  if (ablation) {
    json rows = json::array();
    if (!g.json) std::printf("%-10s %8s %8s %9s %7s\n", "variant", "params", "loss", "train_acc", "val_acc");
    toy::run_ablation(rc.model, rc.data, rc.train, true, [&](const toy::AblationRow& row) {
      const auto& last = row.history.epochs.back();
      if (!g.json) {
        std::printf("%-10s %8zu %8.4f %9.3f %7.3f\n", row.name.c_str(), row.params, last.loss, last.train_acc,
                    last.val_acc);
        std::fflush(stdout);
      }
      write_text(dir / ("history_" + row.name + ".csv"), row.history.to_csv());
      rows.push_back({{"variant", row.name}, {"params", row.params}, {"history", row.history.to_json()}});
    });
    doc["ablation"] = rows;
    write_text(dir / "ablation.json", doc.dump(2) + "\n");
  } else {
    toy::ToyNet net = toy::build(rc.model, satt::Rng(rc.train.seed));
    if (!g.json) {
      std::printf("model %zu parameters, attention %s\n", net.param_count(),
                  std::string(toy::to_string(rc.model.attention)).c_str());
      std::printf("%5s  %9s  %8s  %9s  %7s\n", "epoch", "lr", "loss", "train_acc", "val_acc");
    }
    const toy::History h = toy::train(net, rc.data, rc.train, epoch_line);
    write_text(dir / "history.csv", h.to_csv());
    doc["history"] = h.to_json();
    doc["params"] = net.param_count();
    write_text(dir / "history.json", doc.dump(2) + "\n");
    toy::save_checkpoint(dir / "checkpoint", net);
  }
  doc["out_dir"] = out_dir;
  if (g.json) {
    std::cout << doc.dump(2) << '\n';
  } else {
    std::printf("wrote %s\n", out_dir.c_str());
  }
  return kOk;
}

int run_selftest(const Globals& g, bool with_training) {
  json checks = json::array();
  bool pass = true;
  for (const auto& spec : satt::testing::all_checks(with_training)) {
    const auto r = satt::testing::timed(spec);
    pass = pass && r.pass;
    if (g.json) {
      checks.push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail}, {"seconds", r.seconds}});
    } else {
      std::cout << satt::testing::result_line(r) << std::endl;
    }
  }
  if (g.json) {
    std::cout << json{{"command", "selftest"}, {"pass", pass}, {"checks", checks}}.dump(2) << '\n';
  } else {
    std::cout << (pass ? "all checks passed" : "some checks FAILED") << '\n';
  }
  return pass ? kOk : kCheckFailed;
}

int report_error(const Globals& g, int code, const std::string& message) {
  std::cerr << "error: " << message << '\n';
  if (g.json) std::cout << json{{"error", message}, {"exit_code", code}}.dump(2) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shuffle attention: forward, gradient checks, cost accounting and toy training"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Seed for randomised fixtures and training");
  app.add_flag("--json", g.json, "Emit a single JSON document on stdout");

  std::string input, output, params_path;
  std::size_t groups = 64;
  VariantFlags flags;
  auto* fwd = app.add_subcommand("forward", "Apply shuffle attention to a SATK tensor file");
  fwd->add_option("--input", input, "Input SATK file")->required();
  fwd->add_option("--output", output, "Output SATK file")->required();
  fwd->add_option("--groups", groups, "Number of groups G")->required()->check(CLI::PositiveNumber);
  fwd->add_option("--params", params_path, "SaParams JSON (default: w = 0, b = 1, gamma = 1, beta = 0)");
  flags.add(fwd);

  std::size_t shuffle_groups = 2;
  bool inverse = false;
  auto* shf = app.add_subcommand("shuffle", "Channel-shuffle a SATK tensor file");
  shf->add_option("--input", input, "Input SATK file")->required();
  shf->add_option("--output", output, "Output SATK file")->required();
  shf->add_option("--g", shuffle_groups, "Shuffle groups")->capture_default_str()->check(CLI::PositiveNumber);
  shf->add_flag("--inverse", inverse, "Apply the inverse permutation");

  std::string shape_text;
  double tol = 1e-4, step = 1e-5;
  auto* gc = app.add_subcommand("gradcheck", "Compare tape gradients with central differences");
  gc->add_option("--shape", shape_text, "Input shape n,c,h,w")->required();
  gc->add_option("--groups", groups, "Number of groups G")->required()->check(CLI::PositiveNumber);
  gc->add_option("--tol", tol, "Relative tolerance")->capture_default_str();
  gc->add_option("--step", step, "Finite-difference step")->capture_default_str();
  flags.add(gc);

  std::string model = "resnet50", attention = "none";
  bool se_bias = false;
  auto* cost = app.add_subcommand("cost", "Parameter and FLOP accounting for a backbone");
  cost->add_option("--model", model, "resnet50, resnet101 or a descriptor JSON file")->capture_default_str();
  cost->add_option("--attention", attention, "none, sa:G or se:r")->capture_default_str();
  cost->add_flag("--se-bias", se_bias, "Count the biases of the SE fully connected layers");
  flags.add(cost);

  std::string config_path, out_dir = "train_out";
  bool ablation = false;
  std::size_t epochs = 0;
  auto* tr = app.add_subcommand("train", "Train the toy residual network");
  tr->add_option("--config", config_path, "Run config JSON {seed, model, train, data}");
  tr->add_option("--out", out_dir, "Output directory")->capture_default_str();
  tr->add_option("--epochs", epochs, "Override the configured epoch count");
  tr->add_flag("--ablation", ablation, "Train baseline, every SA variant and SE");

  bool with_training = false;
  auto* st = app.add_subcommand("selftest", "Run the built-in property checks");
  st->add_flag("--with-training", with_training, "Include the toy training check (about two minutes)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*fwd) return run_forward(g, input, groups, params_path, flags, output);
    if (*shf) return run_shuffle(g, input, shuffle_groups, inverse, output);
    if (*gc) return run_gradcheck(g, shape_text, groups, tol, step, flags);
    if (*cost) return run_cost(g, model, attention, se_bias, flags);
    if (*tr) return run_train(g, config_path, out_dir, ablation, epochs);
    if (*st) return run_selftest(g, with_training);
  } catch (const satt::FormatError& e) {
    return report_error(g, kIoError, e.what());
  } catch (const satt::ConfigError& e) {
    return report_error(g, kConfigError, e.what());
  } catch (const satt::ShapeError& e) {
    return report_error(g, kConfigError, e.what());
  } catch (const satt::NumericError& e) {
    return report_error(g, kCheckFailed, e.what());
  } catch (const std::exception& e) {
    return report_error(g, kCheckFailed, e.what());
  }
  return kConfigError;
}
