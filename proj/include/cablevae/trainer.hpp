#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cablevae/autodiff.hpp"
#include "cablevae/model.hpp"
#include "cablevae/objective.hpp"
#include "cablevae/tabular.hpp"

namespace cablevae {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

enum class TrainMode { kSupervised, kSemiSupervised };

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 16;
  std::uint64_t seed = 0;
  AdamConfig adam;
  /// Epochs without validation improvement before stopping; 0 disables.
  std::size_t early_stop_patience = 0;
  TrainMode mode = TrainMode::kSupervised;
  std::optional<std::string> target_column;
  /// Weight of the regression-head squared error in semi-supervised mode.
  double supervised_weight = 1.0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& config);
/// Missing fields keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& doc);
nlohmann::json loss_weights_to_json(const objective::LossWeights& weights);
objective::LossWeights loss_weights_from_json(const nlohmann::json& doc);

/// First and second moment estimates per parameter.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::size_t step = 0;
};

/// One Adam update at step t (1-based) with bias-corrected moments.
void adam_step(autodiff::ParameterSet& params, const autodiff::GradientSet& grads, AdamState& state,
               std::size_t t, double learning_rate, const AdamConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  objective::LossBreakdown train;
  std::optional<objective::LossBreakdown> validation;
  double seconds = 0.0;
};

struct RunRecord {
  std::string run_id;
  nlohmann::json config;
  std::vector<EpochRecord> epochs;
  std::string model_path;
  std::size_t dropped_train_rows = 0;
  std::size_t dropped_validation_rows = 0;
  /// Rows fed to gradient computations, summed over all steps.
  std::size_t gradient_rows = 0;
  std::optional<std::size_t> best_epoch;
  bool stopped_early = false;
  /// Batches whose regression targets were all missing (semi-supervised).
  std::size_t unsupervised_only_batches = 0;
};

struct FitResult {
  VaeModel model;
  RunRecord record;
};

/// Minibatch Adam training of a model without a regression head. Rows with a
/// missing encoded cell are dropped from both datasets.
FitResult fit(VaeModel model, const TabularDataset& train, const TabularDataset& validation,
              const objective::LossWeights& weights, const TrainConfig& config);

/// Training with a regression head on the latent mean. The squared error
/// only counts rows whose target is observed; the other rows still drive the
/// reconstruction and KL terms.
FitResult fit_semi_supervised(VaeModel model, const TabularDataset& train,
                              const TabularDataset& validation,
                              const objective::LossWeights& weights, const TrainConfig& config);

/// Writes <root>/<run_id>/{params.json, metrics.csv, model.json, run.json}
/// and returns the run directory. run.json holds wall-clock timings and is the
/// only file whose bytes vary between identical reruns.
std::string save_run(RunRecord& record, const VaeModel& model, const std::string& root);

/// metrics.csv body: epoch,split,cont,cat,kl,total.
std::string metrics_csv(const RunRecord& record);

/// 64-bit FNV-1a, used for run ids.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex_id(std::uint64_t value, std::size_t digits = 12);

}  // namespace cablevae
