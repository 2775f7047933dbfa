#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "cablevae/evaluation.hpp"
#include "cablevae/fleetgen.hpp"
#include "cablevae/imputation.hpp"
#include "cablevae/model.hpp"
#include "cablevae/trainer.hpp"

namespace cablevae {

inline constexpr const char* kVersion = "1.0.0";

/// One JSON document drives every command. Stochastic stages draw their
/// seeds from the root seed through labeled sub-streams unless a section
/// sets its own "seed".
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string run_dir = "runs";
  double train_fraction = 0.8;
  ModelConfig model;
  TrainConfig train;
  objective::LossWeights loss;
  GibbsConfig gibbs;
  AmputationSpec amputation;
  FleetConfig fleet;
  BenchmarkConfig benchmark;
  std::optional<std::string> external_report;
  /// Imputer used by the impute command.
  std::string impute_method = "vae";
  /// Rows drawn by generate. validate always draws as many rows as the
  /// training part holds.
  std::size_t generate_rows = 1000;
  std::map<std::string, std::string> generate_conditions;
};

/// "seed" is required. Unknown sections or fields raise ConfigError naming
/// the path.
PipelineConfig pipeline_config_from_json(const nlohmann::json& doc);
PipelineConfig load_pipeline_config(const std::string& path);
/// Effective configuration with every derived seed filled in.
nlohmann::json pipeline_config_to_json(const PipelineConfig& config);

struct CommandResult {
  std::string run_id;
  std::string summary;
};

/// Writes `out_csv` and the schema next to it (<stem>.schema.json).
CommandResult run_fleetgen(const PipelineConfig& config, const std::string& out_csv);

/// Splits, fits the preprocessor on the training part, trains and writes the
/// run directory under config.run_dir.
CommandResult run_train(const PipelineConfig& config, const std::string& data_csv,
                        const std::string& schema_json);

/// Samples from the prior and writes raw-scale rows.
CommandResult run_generate(const PipelineConfig& config, const std::string& model_json,
                           const std::string& out_csv);

/// Writes the completed table to `out_csv` and provenance flags to
/// <stem>.mask.csv.
/// Baseline imputers need no model; `schema_json` is used when
/// `model_json` is empty.
CommandResult run_impute(const PipelineConfig& config, const std::string& model_json,
                         const std::string& data_csv, const std::string& out_csv,
                         const std::string& schema_json = "");

/// Amputation benchmark on the validation part of the same split the train
/// command uses, with the training part as fully observed reference rows.
CommandResult run_benchmark(const PipelineConfig& config, const std::string& data_csv,
                            const std::string& model_json);

/// Real-versus-synthetic comparison table plus ECDF curves per feature.
CommandResult run_validate(const PipelineConfig& config, const std::string& data_csv,
                           const std::string& model_json);

}  // namespace cablevae
