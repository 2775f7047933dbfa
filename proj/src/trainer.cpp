#include "cablevae/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

using autodiff::Bindings;
using objective::LossBreakdown;
using objective::LossWeights;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate must be finite and non-negative");
  }
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train.adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("train.adam.epsilon must be > 0");
  if (mode == TrainMode::kSemiSupervised && !target_column) {
    throw ConfigError("train.target_column is required in semi_supervised mode");
  }
  if (!(supervised_weight >= 0.0) || !std::isfinite(supervised_weight)) {
    throw ConfigError("train.supervised_weight must be finite and non-negative");
  }
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json doc = {
      {"learning_rate", c.learning_rate},
      {"batch_size", c.batch_size},
      {"epochs", c.epochs},
      {"seed", c.seed},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
      {"early_stop_patience", c.early_stop_patience},
      {"mode", c.mode == TrainMode::kSupervised ? "supervised" : "semi_supervised"},
      {"supervised_weight", c.supervised_weight}};
  doc["target_column"] = c.target_column ? nlohmann::json(*c.target_column) : nlohmann::json();
  return doc;
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("train: expected an object");
  static const std::set<std::string> allowed{"learning_rate", "batch_size", "epochs", "seed", "adam",
                                             "early_stop_patience", "mode", "target_column",
                                             "supervised_weight", "train_fraction"};
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError("train." + key + ": unknown field");
  }
  TrainConfig c;
  std::string field;
  try {
    field = "learning_rate";
    c.learning_rate = doc.value(field, c.learning_rate);
    field = "batch_size";
    c.batch_size = doc.value(field, c.batch_size);
    field = "epochs";
    c.epochs = doc.value(field, c.epochs);
    field = "seed";
    c.seed = doc.value(field, c.seed);
    field = "early_stop_patience";
    c.early_stop_patience = doc.value(field, c.early_stop_patience);
    field = "supervised_weight";
    c.supervised_weight = doc.value(field, c.supervised_weight);
    field = "adam";
    if (doc.contains(field)) {
      const auto& a = doc[field];
      c.adam.beta1 = a.value("beta1", c.adam.beta1);
      c.adam.beta2 = a.value("beta2", c.adam.beta2);
      c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
    }
    field = "mode";
    const auto mode = doc.value(field, std::string("supervised"));
    if (mode == "supervised") c.mode = TrainMode::kSupervised;
    else if (mode == "semi_supervised") c.mode = TrainMode::kSemiSupervised;
    else throw ConfigError("train.mode: expected supervised or semi_supervised, got '" + mode + "'");
    field = "target_column";
    if (doc.contains(field) && !doc[field].is_null()) c.target_column = doc[field].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("train." + field + ": " + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json loss_weights_to_json(const LossWeights& w) {
  return {{"alpha", w.alpha}, {"beta", w.beta}};
}

LossWeights loss_weights_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("loss: expected an object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "alpha" && key != "beta") throw ConfigError("loss." + key + ": unknown field");
  }
  LossWeights w;
  try {
    w.alpha = doc.value("alpha", w.alpha);
    w.beta = doc.value("beta", w.beta);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("loss: ") + e.what());
  }
  w.validate();
  return w;
}

void adam_step(autodiff::ParameterSet& params, const autodiff::GradientSet& grads, AdamState& state,
               std::size_t t, double learning_rate, const AdamConfig& config) {
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (p.shape() != g.shape()) throw ShapeError("adam_step: gradient shape mismatch for '" + name + "'");
    auto [mit, m_new] = state.m.try_emplace(name, g.shape());
    auto [vit, v_new] = state.v.try_emplace(name, g.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
  state.step = t;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_id(std::uint64_t value, std::size_t digits) {
  static const char* kHex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kHex[value & 0xf];
    value >>= 4;
  }
  return s.substr(16 - std::min<std::size_t>(digits, 16));
}

namespace {

struct Prepared {
  TabularDataset data;  // standardized, filtered rows
  std::size_t dropped = 0;
};

Prepared prepare(const VaeModel& model, const TabularDataset& raw) {
  if (!(raw.schema() == model.schema())) throw DataError("training data schema does not match the model");
  const auto columns = model.layout().encoder_columns();
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    if (raw.row_complete(r, columns)) keep.push_back(r);
  }
  Prepared p{transform(raw.select_rows(keep), model.preprocessor()), raw.rows() - keep.size()};
  return p;
}

Tensor normal_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

// Adds the regression target inputs; returns the observed-target count.
std::size_t bind_targets(const VaeModel& model, const TabularDataset& data,
                         const std::vector<std::size_t>& rows, Bindings& inputs) {
  const std::size_t col = *model.layout().target;
  Tensor target({rows.size(), 1});
  Tensor weight({rows.size(), 1});
  std::size_t observed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (data.observed(rows[i], col)) {
      target[i] = data.value(rows[i], col);
      weight[i] = 1.0;
      ++observed;
    }
  }
  if (observed > 0) {
    for (double& w : weight.values()) w /= static_cast<double>(observed);
  }
  inputs["target"] = std::move(target);
  inputs["target_weight"] = std::move(weight);
  return observed;
}

LossBreakdown read_breakdown(const autodiff::Graph& graph, const autodiff::Evaluation& ev) {
  LossBreakdown b;
  const auto& outs = graph.outputs();
  if (outs.count("cont")) b.cont = ev.at(graph.output("cont")).item();
  if (outs.count("cat")) b.cat = ev.at(graph.output("cat")).item();
  b.kl = ev.at(graph.output("kl")).item();
  b.total = ev.at(graph.output("loss")).item();
  return b;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double weight) {
  acc.cont += weight * b.cont;
  acc.cat += weight * b.cat;
  acc.kl += weight * b.kl;
  acc.total += weight * b.total;
}

void check_finite(const LossBreakdown& b, std::size_t epoch) {
  if (!std::isfinite(b.total) || !std::isfinite(b.cont) || !std::isfinite(b.cat) || !std::isfinite(b.kl)) {
    throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch));
  }
}

std::uint64_t dataset_fingerprint(const TabularDataset& ds, std::uint64_t h) {
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(ds.cells().data()),
                             ds.cells().size() * sizeof(double)),
            h);
  return fnv1a(std::string_view(reinterpret_cast<const char*>(ds.mask().data()), ds.mask().size()), h);
}

FitResult fit_impl(VaeModel model, const TabularDataset& train_raw, const TabularDataset& val_raw,
                   const LossWeights& weights, const TrainConfig& config) {
  config.validate();
  weights.validate();
  const bool semi = model.layout().target.has_value();

  RunRecord record;
  record.config = {{"train", train_config_to_json(config)},
                   {"model", model_config_to_json(model.config())},
                   {"loss", loss_weights_to_json(weights)}};
  record.run_id = hex_id(dataset_fingerprint(val_raw, dataset_fingerprint(train_raw, fnv1a(record.config.dump()))));

  Prepared train = prepare(model, train_raw);
  Prepared val = prepare(model, val_raw);
  record.dropped_train_rows = train.dropped;
  record.dropped_validation_rows = val.dropped;
  if (train.dropped > 0) {
    std::clog << "[cablevae] dropped " << train.dropped << " incomplete training rows\n";
  }
  if (train.data.rows() == 0) throw DataError("training set has no usable rows");

  const std::size_t latent = model.config().latent_dim;
  const autodiff::Graph graph = build_training_graph(model, weights, config.supervised_weight);
  const autodiff::NodeId loss_node = graph.output("loss");

  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  Rng noise_rng(derive_seed(config.seed, "noise"));
  Rng val_noise_rng(derive_seed(config.seed, "validation"));
  const Tensor val_noise = normal_matrix(val_noise_rng, val.data.rows(), latent);

  std::vector<std::size_t> order(train.data.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  AdamState adam;
  std::size_t step = 0;
  std::optional<double> best_val;
  autodiff::ParameterSet best_params;
  std::size_t batches_total = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    EpochRecord rec{.epoch = epoch};
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      Bindings inputs = encoder_bindings(model, train.data, rows);
      inputs["noise"] = normal_matrix(noise_rng, rows.size(), latent);
      if (semi && bind_targets(model, train.data, rows, inputs) == 0) ++record.unsupervised_only_batches;
      ++batches_total;

      auto result = autodiff::gradients(graph, model.parameters(), inputs, loss_node);
      record.gradient_rows += rows.size();
      const LossBreakdown b = read_breakdown(graph, result.evaluation);
      check_finite(b, epoch);
      accumulate(rec.train, b, static_cast<double>(rows.size()) / static_cast<double>(order.size()));
      adam_step(model.mutable_parameters(), result.gradients, adam, ++step, config.learning_rate, config.adam);
    }

    if (val.data.rows() > 0) {
      LossBreakdown vb;
      for (std::size_t begin = 0; begin < val.data.rows(); begin += config.batch_size) {
        const std::size_t end = std::min(val.data.rows(), begin + config.batch_size);
        std::vector<std::size_t> rows;
        for (std::size_t r = begin; r < end; ++r) rows.push_back(r);
        Bindings inputs = encoder_bindings(model, val.data, rows);
        Tensor noise({rows.size(), latent});
        std::copy_n(val_noise.data() + begin * latent, rows.size() * latent, noise.data());
        inputs["noise"] = std::move(noise);
        if (semi) bind_targets(model, val.data, rows, inputs);
        std::vector<autodiff::NodeId> targets;
        for (const auto& [name, id] : graph.outputs()) targets.push_back(id);
        const auto ev = autodiff::forward(graph, model.parameters(), inputs, targets);
        accumulate(vb, read_breakdown(graph, ev),
                   static_cast<double>(rows.size()) / static_cast<double>(val.data.rows()));
      }
      check_finite(vb, epoch);
      rec.validation = vb;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    record.epochs.push_back(rec);

    if (rec.validation) {
      if (!best_val || rec.validation->total < *best_val) {
        best_val = rec.validation->total;
        record.best_epoch = epoch;
        if (config.early_stop_patience > 0) best_params = model.parameters();
      } else if (config.early_stop_patience > 0 && epoch - *record.best_epoch >= config.early_stop_patience) {
        model.mutable_parameters() = best_params;
        record.stopped_early = true;
        break;
      }
    }
  }

  if (semi && batches_total > 0 && record.unsupervised_only_batches == batches_total) {
    std::clog << "[cablevae] warning: every batch lacked observed targets; the regression head was not trained\n";
  }
  if (!record.epochs.empty()) model.set_trained(true);
  return {std::move(model), std::move(record)};
}

}  // namespace

FitResult fit(VaeModel model, const TabularDataset& train, const TabularDataset& validation,
              const LossWeights& weights, const TrainConfig& config) {
  if (config.mode != TrainMode::kSupervised || model.layout().target) {
    throw ConfigError("fit: use fit_semi_supervised for models with a regression target");
  }
  return fit_impl(std::move(model), train, validation, weights, config);
}

FitResult fit_semi_supervised(VaeModel model, const TabularDataset& train, const TabularDataset& validation,
                              const LossWeights& weights, const TrainConfig& config) {
  config.validate();
  const auto& target = model.layout().target;
  if (config.mode != TrainMode::kSemiSupervised || !target ||
      model.schema()[*target].name != *config.target_column) {
    throw ConfigError("fit_semi_supervised: model target column must match train.target_column");
  }
  return fit_impl(std::move(model), train, validation, weights, config);
}

std::string metrics_csv(const RunRecord& record) {
  std::ostringstream out;
  out << "epoch,split,cont,cat,kl,total\n";
  auto row = [&](std::size_t epoch, const char* split, const LossBreakdown& b) {
    out << epoch << "," << split << "," << format_double(b.cont) << "," << format_double(b.cat) << ","
        << format_double(b.kl) << "," << format_double(b.total) << "\n";
  };
  for (const auto& e : record.epochs) {
    row(e.epoch, "train", e.train);
    if (e.validation) row(e.epoch, "validation", *e.validation);
  }
  return out.str();
}

std::string save_run(RunRecord& record, const VaeModel& model, const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / record.run_id;
  fs::create_directories(dir);
  record.model_path = (dir / "model.json").string();

  auto write = [&](const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
  };
  nlohmann::json params = record.config;
  params["run_id"] = record.run_id;
  write(dir / "params.json", params.dump(2) + "\n");
  write(dir / "metrics.csv", metrics_csv(record));
  save_model(model, record.model_path);

  nlohmann::json meta = {{"run_id", record.run_id},
                         {"epochs_executed", record.epochs.size()},
                         {"dropped_train_rows", record.dropped_train_rows},
                         {"dropped_validation_rows", record.dropped_validation_rows},
                         {"gradient_rows", record.gradient_rows},
                         {"stopped_early", record.stopped_early},
                         {"unsupervised_only_batches", record.unsupervised_only_batches}};
  meta["best_epoch"] = record.best_epoch ? nlohmann::json(*record.best_epoch) : nlohmann::json();
  nlohmann::json seconds = nlohmann::json::array();
  for (const auto& e : record.epochs) seconds.push_back(e.seconds);
  meta["epoch_seconds"] = seconds;
  write(dir / "run.json", meta.dump(2) + "\n");
  return dir.string();
}

}  // namespace cablevae
