#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "satt/toy/dataset.hpp"
#include "satt/toy/net.hpp"

namespace satt::toy {

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t warmup_epochs = 0;
  bool step_decay = true;  // x0.1 at 1/3 and 2/3 of the epochs

  void validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
      throw ConfigError("weight_decay must be finite and non-negative");
    }
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (warmup_epochs > epochs) throw ConfigError("warmup_epochs exceeds epochs");
  }

  // Learning rate for step `iter` (0-based) of `epoch` (0-based).
  double lr_at(std::size_t epoch, std::size_t iter, std::size_t iters_per_epoch) const {
    double rate = lr;
    if (step_decay) {
      if (epoch >= epochs / 3 && epochs >= 3) rate *= 0.1;
      if (epoch >= 2 * epochs / 3 && epochs >= 3) rate *= 0.1;
    }
    if (epoch < warmup_epochs) {
      const double done = static_cast<double>(epoch * iters_per_epoch + iter + 1);
      rate *= done / static_cast<double>(warmup_epochs * iters_per_epoch);
    }
    return rate;
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"warmup_epochs", c.warmup_epochs},
          {"step_decay", c.step_decay}};
}

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // rate at the epoch's last step
  double loss = 0.0;      // sample-weighted mean training loss
  double train_acc = 0.0;
  double val_acc = 0.0;   // NaN when there is no validation split

  bool operator==(const EpochStats&) const = default;
};

struct History {
  std::vector<EpochStats> epochs;

  // Bit-level comparison (NaN == NaN).
  bool identical(const History& o) const {
    if (epochs.size() != o.epochs.size()) return false;
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      const EpochStats& a = epochs[i];
      const EpochStats& b = o.epochs[i];
      if (a.epoch != b.epoch) return false;
      for (auto [x, y] : {std::pair{a.lr, b.lr}, std::pair{a.loss, b.loss}, std::pair{a.train_acc, b.train_acc},
                          std::pair{a.val_acc, b.val_acc}}) {
        if (std::bit_cast<std::uint64_t>(x) != std::bit_cast<std::uint64_t>(y)) return false;
      }
    }
    return true;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "epoch,loss,train_acc,val_acc\n";
    os.precision(17);
    for (const auto& e : epochs) os << e.epoch << ',' << e.loss << ',' << e.train_acc << ',' << e.val_acc << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    auto arr = nlohmann::json::array();
    for (const auto& e : epochs) {
      arr.push_back({{"epoch", e.epoch},
                     {"lr", e.lr},
                     {"loss", e.loss},
                     {"train_acc", e.train_acc},
                     {"val_acc", std::isnan(e.val_acc) ? nlohmann::json(nullptr) : nlohmann::json(e.val_acc)}});
    }
    return arr;
  }
};

inline std::size_t count_correct(const Tensor4f& logits, const std::vector<int>& labels) {
  std::size_t correct = 0;
  for (std::size_t n = 0; n < logits.n(); ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.c(); ++k) {
      if (logits(n, k, 0, 0) > logits(n, best, 0, 0)) best = k;
    }
    if (static_cast<int>(best) == labels[n]) ++correct;
  }
  return correct;
}

// Top-1 accuracy. Samples are evaluated independently, so the result does
// not depend on their order or on the batch size.
inline double evaluate(const ToyNet& net, const std::vector<Sample>& samples, std::size_t batch_size = 64) {
  if (samples.empty()) throw ConfigError("evaluate: empty split");
  if (batch_size == 0) throw ConfigError("evaluate: batch_size must be positive");
  for (const auto& s : samples) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= net.config.classes) {
      throw ConfigError("evaluate: label " + std::to_string(s.label) + " outside the model's " +
                        std::to_string(net.config.classes) + " classes");
    }
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> labels;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    const std::size_t end = std::min(samples.size(), begin + batch_size);
    const Tensor4f batch = stack_images(samples, order, begin, end, labels);
    correct += count_correct(predict_logits(net, batch), labels);
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline double evaluate(const ToyNet& net, const SyntheticDataset& data, Split split) {
  if (data.classes != net.config.classes) {
    throw ConfigError("evaluate: dataset has " + std::to_string(data.classes) + " classes, model has " +
                      std::to_string(net.config.classes));
  }
  return evaluate(net, data.split(split));
}

// Momentum SGD with coupled weight decay:
//   v <- mu * v + (g + wd * theta);  theta <- theta - lr * v
class Sgd {
 public:
  explicit Sgd(const ToyNet& net) {
    for (const auto& p : net.params) velocity_.emplace_back(p.value.size(), 0.0f);
  }

  void step(ToyNet& net, const std::vector<Tensor4f>& grads, double lr, double momentum, double wd) {
    const auto mu = static_cast<float>(momentum);
    const auto decay = static_cast<float>(wd);
    const auto rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < net.params.size(); ++i) {
      auto theta = net.params[i].value.data();
      auto g = grads[i].data();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < theta.size(); ++j) {
        v[j] = mu * v[j] + (g[j] + decay * theta[j]);
        theta[j] -= rate * v[j];
      }
    }
  }

 private:
  std::vector<std::vector<float>> velocity_;
};

// One forward/backward pass; returns the mean loss and fills grads and logits.
inline double loss_and_grads(const ToyNet& net, const Tensor4f& images, const std::vector<int>& labels,
                             std::vector<Tensor4f>& grads, Tensor4f& logits) {
  grad::Tape<float> tape;
  const auto p = param_leaves(tape, net);
  grad::Var out = forward(tape, net, p, images);
  grad::Var loss = grad::softmax_cross_entropy(tape, out, std::span<const int>(labels));
  const double value = tape.value(loss)[0];
  logits = tape.value(out);
  if (!std::isfinite(value)) return value;
  tape.backward(loss, Tensor4f(Shape4{1, 1, 1, 1}, 1.0f));
  grads.clear();
  for (grad::Var v : p) grads.push_back(tape.grad(v));
  return value;
}

using EpochCallback = std::function<void(const EpochStats&)>;

inline History train(ToyNet& net, const SyntheticDataset& data, const TrainConfig& tc,
                     const EpochCallback& on_epoch = {}) {
  tc.validate();
  data.validate();
  if (data.classes != net.config.classes) {
    throw ConfigError("train: dataset has " + std::to_string(data.classes) + " classes, model has " +
                      std::to_string(net.config.classes));
  }
  if (data.image_size != net.config.input_size) {
    throw ConfigError("train: dataset image_size=" + std::to_string(data.image_size) +
                      " does not match model input_size=" + std::to_string(net.config.input_size));
  }
  const std::vector<Sample> train_set = data.split(Split::train);
  const std::vector<Sample> val_set = data.split(Split::val);
  const std::size_t iters = (train_set.size() + tc.batch_size - 1) / tc.batch_size;
  const Rng order_rng = Rng(tc.seed).split(0x5EEDu);

  Sgd opt(net);
  History history;
  std::vector<std::size_t> order(train_set.size());
  std::vector<int> labels;
  std::vector<Tensor4f> grads;
  Tensor4f logits(Shape4{1, 1, 1, 1});
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = order_rng.split(epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    double rate = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
      const std::size_t begin = it * tc.batch_size;
      const std::size_t end = std::min(train_set.size(), begin + tc.batch_size);
      const Tensor4f batch = stack_images(train_set, order, begin, end, labels);
      const double loss = loss_and_grads(net, batch, labels, grads, logits);
      if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(it + 1));
      }
      loss_sum += loss * static_cast<double>(end - begin);
      correct += count_correct(logits, labels);
      rate = tc.lr_at(epoch, it, iters);
      opt.step(net, grads, rate, tc.momentum, tc.weight_decay);
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = rate;
    stats.loss = loss_sum / static_cast<double>(train_set.size());
    stats.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    stats.val_acc = val_set.empty() ? std::nan("") : evaluate(net, val_set);
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return history;
}

struct AblationRow {
  std::string name;  // "baseline", "se" or an SA variant name
  std::size_t params = 0;
  History history;
};

// Trains the baseline and every SA ablation variant (optionally SE too) from
// the same seed on the same data. Networks share all non-attention weights.
inline std::vector<AblationRow> run_ablation(const ToyNetConfig& base, const SyntheticDataset& data,
                                             const TrainConfig& tc, bool include_se = false,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<std::pair<std::string, ToyNetConfig>> runs;
  ToyNetConfig none = base;
  none.attention = Attention::none;
  runs.emplace_back("baseline", none);
  for (std::string_view v : kAblationVariants) {
    ToyNetConfig c = base;
    c.attention = Attention::sa;
    c.sa_variant = std::string(v);
    runs.emplace_back(std::string(v), c);
  }
  if (include_se) {
    ToyNetConfig c = base;
    c.attention = Attention::se;
    runs.emplace_back("se", c);
  }
  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : runs) {
    ToyNet net = build(cfg, Rng(tc.seed));
    AblationRow row{name, net.param_count(), train(net, data, tc)};
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Everything one training run needs. The top-level "seed" of the JSON form
// seeds the data generator, the initialisation and the batch order.
struct RunConfig {
  ToyNetConfig model;
  TrainConfig train;
  SyntheticDataset data;

  void set_seed(std::uint64_t seed) {
    train.seed = seed;
    data.seed = seed;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json train = to_json(c.train);
  train.erase("seed");
  return {{"seed", c.train.seed},
          {"model", to_json(c.model)},
          {"train", train},
          {"data",
           {{"train_size", c.data.train_size},
            {"val_size", c.data.val_size},
            {"image_size", c.data.image_size},
            {"noise_sigma", c.data.noise_sigma}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  detail::reject_unknown_keys(j, {"seed", "model", "train", "data"}, "run config");
  RunConfig c;
  try {
    if (j.contains("model")) {
      detail::reject_unknown_keys(j.at("model"),
                                  {"channels", "blocks_per_stage", "attention", "sa_variant", "sa_groups",
                                   "se_reduction", "classes", "input_channels", "input_size", "stem_stride"},
                                  "model");
      c.model = net_config_from_json(j.at("model"));
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      detail::reject_unknown_keys(t, {"lr", "momentum", "weight_decay", "epochs", "batch_size", "warmup_epochs",
                                      "step_decay"},
                                  "train");
      c.train.lr = t.value("lr", c.train.lr);
      c.train.momentum = t.value("momentum", c.train.momentum);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.warmup_epochs = t.value("warmup_epochs", c.train.warmup_epochs);
      c.train.step_decay = t.value("step_decay", c.train.step_decay);
    }
    c.data.image_size = c.model.input_size;
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::reject_unknown_keys(d, {"train_size", "val_size", "image_size", "noise_sigma"}, "data");
      c.data.train_size = d.value("train_size", c.data.train_size);
      c.data.val_size = d.value("val_size", c.data.val_size);
      c.data.image_size = d.value("image_size", c.data.image_size);
      c.data.noise_sigma = d.value("noise_sigma", c.data.noise_sigma);
    }
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.data.classes = c.model.classes;
  c.model.validate();
  c.train.validate();
  c.data.validate();
  if (c.data.image_size != c.model.input_size) {
    throw ConfigError("data image_size=" + std::to_string(c.data.image_size) + " does not match model input_size=" +
                      std::to_string(c.model.input_size));
  }
  return c;
}

}  // namespace satt::toy
