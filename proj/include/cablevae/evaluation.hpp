#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cablevae/imputation.hpp"
#include "cablevae/model.hpp"
#include "cablevae/tabular.hpp"

namespace cablevae {

enum class Mechanism { kMcar, kMar, kMnar };

struct AmputationSpec {
  std::vector<std::string> columns{"Age"};
  double fraction = 0.49;
  Mechanism mechanism = Mechanism::kMnar;
  /// Driver column for MAR.
  std::optional<std::string> driver;
  std::uint64_t seed = 0;

  void validate(const Schema& schema) const;
};

nlohmann::json amputation_spec_to_json(const AmputationSpec& spec);
AmputationSpec amputation_spec_from_json(const nlohmann::json& doc);

struct MaskedCell {
  std::size_t row = 0;
  std::size_t column = 0;
  double value = 0.0;
};

struct Amputation {
  TabularDataset amputated;
  /// Ground truth of every masked cell, grouped by column in spec order and
  /// sorted by row within a column.
  std::vector<MaskedCell> truth;
};

/// Masks exactly round(fraction * observed) cells per target column. MCAR
/// samples uniformly without replacement. MAR and MNAR sample without
/// replacement with weights equal to the (average) rank of the driver or of
/// the target itself, so larger values are more likely to be masked.
Amputation ampute(const TabularDataset& dataset, const AmputationSpec& spec);

struct Scores {
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

/// R^2 is taken against the mean of `truth`.
Scores score(const std::vector<double>& truth, const std::vector<double>& imputed);

/// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b);

/// Sorted distinct values with the fraction of the sample at or below each.
std::vector<std::pair<double, double>> ecdf(std::vector<double> sample);

/// Observed values of one column.
std::vector<double> column_values(const TabularDataset& dataset, std::size_t column);

struct ComparisonRow {
  std::string feature;
  /// "raw" or "log" for continuous features, "categories" for categorical.
  std::string scale;
  double real_mean = 0.0;
  double real_std = 0.0;
  double synthetic_mean = 0.0;
  double synthetic_std = 0.0;
  /// KS statistic for continuous rows, total-variation distance otherwise.
  double distance = 0.0;
};

/// Means and sample standard deviations on the raw and log1p scales plus KS
/// per continuous column; total-variation distance of category frequencies
/// per categorical column.
std::vector<ComparisonRow> compare_real_synthetic(const TabularDataset& real,
                                                  const TabularDataset& synthetic);
void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);
/// value,fraction
void write_ecdf_csv(std::ostream& out, const std::vector<std::pair<double, double>>& curve);

struct BenchmarkRow {
  std::string imputer;
  std::string column;
  std::string scale;  // "raw" or "log"
  double mae = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
  bool external = false;
  /// Set when the imputer failed; the metrics are then meaningless.
  std::optional<std::string> error;
};

struct BenchmarkConfig {
  AmputationSpec amputation;
  std::vector<std::string> imputers{"vae", "median", "mean", "mode", "random", "knn", "iterative"};
  std::size_t knn_k = 5;
  std::size_t iterative_rounds = 10;
  double ridge_lambda = 1e-3;
  GibbsConfig gibbs;
  std::uint64_t baseline_seed = 0;

  void validate() const;
};

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& config);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& doc);

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  nlohmann::json metadata;

  const BenchmarkRow* find(const std::string& imputer, const std::string& column,
                           const std::string& scale = "raw") const;
  /// Appends rows parsed from a report CSV, flagged as external.
  void merge_external(std::istream& csv);
};

struct BenchmarkRun {
  BenchmarkReport report;
  Amputation amputation;
  std::vector<ImputationResult> results;
};

/// Amputes `dataset` and runs every imputer on the same table: the fully
/// observed `reference` rows (may be empty) followed by the amputated rows.
/// Only masked cells of `dataset` are scored, on the raw and log1p scales.
/// A failing imputer yields rows with `error` set instead of aborting.
BenchmarkRun build_benchmark(const TabularDataset& dataset, const TabularDataset& reference,
                             const BenchmarkConfig& config, const VaeModel* model);

/// imputer,column,scale,mae,rmse,r2; failed imputers leave the metric fields empty.
void write_report_csv(std::ostream& out, const BenchmarkReport& report);

}  // namespace cablevae
