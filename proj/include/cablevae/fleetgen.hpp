#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cablevae/tabular.hpp"

namespace cablevae {

struct LogNormalParams {
  double log_median = 0.0;
  double log_std = 1.0;
};

/// Synthetic medium-voltage cable register. Ages are in years, lengths in
/// meters. Conditional tables map a parent label to shares over the child
/// column's categories.
struct FleetConfig {
  std::size_t n = 10000;
  std::uint64_t seed = 0;

  std::vector<std::string> dsos{"A", "B", "C", "D"};
  std::vector<double> dso_shares{0.45, 0.3, 0.15, 0.1};
  /// Added to log age per DSO.
  std::vector<double> dso_age_offsets{0.35, 0.0, -0.2, -0.4};

  double pilc_share = 0.4;
  LogNormalParams pilc_age{3.81, 0.15};
  LogNormalParams xlpe_age{3.08, 0.4};
  /// Added to log age of aluminium conductors.
  double aluminium_age_offset = -0.25;

  std::vector<std::string> voltages{"10kV", "15kV", "20kV", "30kV"};
  std::map<std::string, std::vector<double>> voltage_given_dso{
      {"A", {0.97, 0.01, 0.02, 0.0}},
      {"B", {0.01, 0.01, 0.97, 0.01}},
      {"C", {0.01, 0.97, 0.01, 0.01}},
      {"D", {0.01, 0.0, 0.02, 0.97}}};
  std::map<std::string, std::vector<double>> aluminium_given_insulation{
      {"PILC", {0.02}}, {"XLPE", {0.97}}};
  std::map<std::string, std::vector<double>> three_core_given_insulation{
      {"PILC", {0.99}}, {"XLPE", {0.02}}};
  std::vector<std::string> conductor_sizes{"50", "95", "150", "240", "400", "630"};
  std::map<std::string, std::vector<double>> size_given_voltage{
      {"10kV", {0.03, 0.92, 0.03, 0.02, 0.0, 0.0}},
      {"15kV", {0.02, 0.03, 0.92, 0.03, 0.0, 0.0}},
      {"20kV", {0.0, 0.02, 0.03, 0.92, 0.03, 0.0}},
      {"30kV", {0.0, 0.0, 0.01, 0.03, 0.92, 0.04}}};

  LogNormalParams length{4.38, 1.1};
  /// Added to log length per voltage level.
  std::vector<double> voltage_length_offsets{0.0, 0.1, 0.25, 0.5};
  double pilc_length_offset = -0.2;

  /// Length := Age for every row, so log1p(Length) equals log1p(Age).
  bool length_equals_age = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

nlohmann::json fleet_config_to_json(const FleetConfig& config);
/// Missing fields keep their defaults.
FleetConfig fleet_config_from_json(const nlohmann::json& doc);

/// Length, Age, OperationVoltage, DSO, Insulation, ConductorMaterial,
/// ConductorSize, NumberOfConductors.
Schema fleet_schema(const FleetConfig& config = {});

/// Fully observed fleet, deterministic per seed. Ages are whole years and
/// lengths are rounded to 0.1 m.
TabularDataset generate_fleet(const FleetConfig& config);

}  // namespace cablevae
