#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "cablevae/model.hpp"
#include "cablevae/tabular.hpp"

namespace cablevae {

enum class Aggregation { kLast, kMean };

struct GibbsConfig {
  std::size_t iterations = 50;
  std::size_t burn_in = 25;
  Aggregation aggregation = Aggregation::kMean;
  std::uint64_t seed = 0;
  /// Rows encoded per graph evaluation. Results do not depend on it.
  std::size_t batch_rows = 1024;

  void validate() const;
};

nlohmann::json gibbs_config_to_json(const GibbsConfig& config);
GibbsConfig gibbs_config_from_json(const nlohmann::json& doc);

struct ImputationResult {
  TabularDataset completed;
  /// Row-major, one flag per cell: 1 where the value was filled in.
  std::vector<std::uint8_t> imputed;
  std::string imputer;
  nlohmann::json config;

  bool was_imputed(std::size_t r, std::size_t c) const {
    return imputed[r * completed.cols() + c] != 0;
  }
  std::size_t imputed_count() const;
};

/// Sidecar CSV with the dataset header and one 0/1 provenance flag per cell.
void write_provenance_csv(std::ostream& out, const ImputationResult& result);

/// Pseudo-Gibbs chain through a trained model on a raw-scale dataset.
/// Missing cells start at the standardized mean (continuous) or the modal
/// category and are refilled each iteration from the decoder: continuous
/// cells with the decoder mean, categorical cells with a draw from the
/// softmax. A missing regression target is filled from the regression head.
/// Each row draws from its own stream derive_seed(seed, row).
ImputationResult pseudo_gibbs_impute(const VaeModel& model, const TabularDataset& dataset,
                                     const GibbsConfig& config);

enum class BaselineMethod { kRandom, kMode, kMedian, kMean };

BaselineMethod parse_baseline_method(const std::string& name);
std::string baseline_method_name(BaselineMethod method);

/// Column statistics come from the observed cells of `reference`. Categorical
/// columns use the mode for every method except random.
ImputationResult baseline_impute(const TabularDataset& dataset, BaselineMethod method,
                                 std::uint64_t seed, const TabularDataset& reference);
ImputationResult baseline_impute(const TabularDataset& dataset, BaselineMethod method,
                                 std::uint64_t seed);

/// k nearest complete rows under the Gower distance. Continuous differences
/// are taken on the standardized scale and divided by the column range over
/// the complete rows.
ImputationResult knn_impute(const TabularDataset& dataset, std::size_t k);

/// Round-robin ridge regression of each incomplete column on all others
/// (standardized continuous plus one-hot categoricals), starting from
/// mean/mode fills.
ImputationResult iterative_impute(const TabularDataset& dataset, std::size_t rounds,
                                  double ridge_lambda = 1e-3);

/// Solves (X'X + lambda * P) b = X'y by Cholesky, where P is the identity
/// with a zero in the first (intercept) slot. On a non-positive pivot lambda
/// grows tenfold, up to 12 times. Returns the coefficients and the lambda
/// that succeeded.
struct RidgeFit {
  std::vector<double> coefficients;
  double lambda = 0.0;
};
RidgeFit ridge_solve(const std::vector<double>& xtx, const std::vector<double>& xty, std::size_t p,
                     double lambda);

}  // namespace cablevae
