#include "cablevae/fleetgen.hpp"

#include <cmath>
#include <set>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

namespace {

const std::vector<std::string> kInsulation{"PILC", "XLPE"};
const std::vector<std::string> kMaterial{"Cu", "Al"};
const std::vector<std::string> kConductors{"1", "3"};

void check_shares(const std::string& field, const std::vector<double>& shares, std::size_t expected) {
  if (shares.size() != expected) {
    throw ConfigError("fleet." + field + ": expected " + std::to_string(expected) + " shares, got " +
                      std::to_string(shares.size()));
  }
  double sum = 0.0;
  for (double s : shares) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("fleet." + field + ": shares must be >= 0");
    sum += s;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("fleet." + field + ": shares must sum to 1");
}

void check_probability(const std::string& field, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("fleet." + field + ": must lie in [0, 1]");
}

void check_lognormal(const std::string& field, const LogNormalParams& p) {
  if (!std::isfinite(p.log_median)) throw ConfigError("fleet." + field + ".log_median must be finite");
  if (!(p.log_std > 0.0) || !std::isfinite(p.log_std)) throw ConfigError("fleet." + field + ".log_std must be > 0");
}

void check_table(const std::string& field, const std::map<std::string, std::vector<double>>& table,
                 const std::vector<std::string>& parents, std::size_t width, bool probability) {
  for (const auto& parent : parents) {
    auto it = table.find(parent);
    if (it == table.end()) throw ConfigError("fleet." + field + ": no entry for '" + parent + "'");
    if (probability) {
      if (it->second.size() != 1) throw ConfigError("fleet." + field + "." + parent + ": expected one probability");
      check_probability(field + "." + parent, it->second[0]);
    } else {
      check_shares(field + "." + parent, it->second, width);
    }
  }
  if (table.size() != parents.size()) throw ConfigError("fleet." + field + ": unexpected keys");
}

nlohmann::json lognormal_json(const LogNormalParams& p) {
  return {{"log_median", p.log_median}, {"log_std", p.log_std}};
}

LogNormalParams lognormal_from(const nlohmann::json& doc, LogNormalParams p) {
  p.log_median = doc.value("log_median", p.log_median);
  p.log_std = doc.value("log_std", p.log_std);
  return p;
}

nlohmann::json scalar_table(const std::map<std::string, std::vector<double>>& table) {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [k, v] : table) doc[k] = v.at(0);
  return doc;
}

std::map<std::string, std::vector<double>> scalar_table_from(const nlohmann::json& doc) {
  std::map<std::string, std::vector<double>> table;
  for (const auto& [k, v] : doc.items()) table[k] = {v.get<double>()};
  return table;
}

std::size_t draw(Rng& rng, const std::vector<double>& shares) { return rng.categorical(shares); }

}  // namespace

void FleetConfig::validate() const {
  if (n < 1) throw ConfigError("fleet.n must be >= 1");
  if (dsos.size() < 2) throw ConfigError("fleet.dsos: need at least two operators");
  if (std::set<std::string>(dsos.begin(), dsos.end()).size() != dsos.size()) {
    throw ConfigError("fleet.dsos: labels must be unique");
  }
  check_shares("dso_shares", dso_shares, dsos.size());
  if (dso_age_offsets.size() != dsos.size()) throw ConfigError("fleet.dso_age_offsets: one offset per DSO");
  check_probability("pilc_share", pilc_share);
  check_lognormal("pilc_age", pilc_age);
  check_lognormal("xlpe_age", xlpe_age);
  check_lognormal("length", length);
  if (voltages.size() < 2) throw ConfigError("fleet.voltages: need at least two levels");
  if (conductor_sizes.size() < 2) throw ConfigError("fleet.conductor_sizes: need at least two sizes");
  check_table("voltage_given_dso", voltage_given_dso, dsos, voltages.size(), false);
  check_table("aluminium_given_insulation", aluminium_given_insulation, kInsulation, 1, true);
  check_table("three_core_given_insulation", three_core_given_insulation, kInsulation, 1, true);
  check_table("size_given_voltage", size_given_voltage, voltages, conductor_sizes.size(), false);
  if (voltage_length_offsets.size() != voltages.size()) {
    throw ConfigError("fleet.voltage_length_offsets: one offset per voltage");
  }
  for (double v : dso_age_offsets) {
    if (!std::isfinite(v)) throw ConfigError("fleet.dso_age_offsets must be finite");
  }
  for (double v : voltage_length_offsets) {
    if (!std::isfinite(v)) throw ConfigError("fleet.voltage_length_offsets must be finite");
  }
  if (!std::isfinite(aluminium_age_offset) || !std::isfinite(pilc_length_offset)) {
    throw ConfigError("fleet offsets must be finite");
  }
}

nlohmann::json fleet_config_to_json(const FleetConfig& c) {
  return {{"n", c.n},
          {"seed", c.seed},
          {"dsos", c.dsos},
          {"dso_shares", c.dso_shares},
          {"dso_age_offsets", c.dso_age_offsets},
          {"pilc_share", c.pilc_share},
          {"pilc_age", lognormal_json(c.pilc_age)},
          {"xlpe_age", lognormal_json(c.xlpe_age)},
          {"aluminium_age_offset", c.aluminium_age_offset},
          {"voltages", c.voltages},
          {"voltage_given_dso", c.voltage_given_dso},
          {"aluminium_given_insulation", scalar_table(c.aluminium_given_insulation)},
          {"three_core_given_insulation", scalar_table(c.three_core_given_insulation)},
          {"conductor_sizes", c.conductor_sizes},
          {"size_given_voltage", c.size_given_voltage},
          {"length", lognormal_json(c.length)},
          {"voltage_length_offsets", c.voltage_length_offsets},
          {"pilc_length_offset", c.pilc_length_offset},
          {"length_equals_age", c.length_equals_age}};
}

FleetConfig fleet_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("fleet: expected an object");
  FleetConfig c;
  const nlohmann::json defaults = fleet_config_to_json(c);
  for (const auto& [key, value] : doc.items()) {
    if (!defaults.contains(key)) throw ConfigError("fleet." + key + ": unknown field");
  }
  std::string field;
  try {
    auto get = [&](const char* name, auto& target) {
      field = name;
      if (doc.contains(name)) target = doc[name].get<std::decay_t<decltype(target)>>();
    };
    get("n", c.n);
    get("seed", c.seed);
    get("dsos", c.dsos);
    get("dso_shares", c.dso_shares);
    get("dso_age_offsets", c.dso_age_offsets);
    get("pilc_share", c.pilc_share);
    get("aluminium_age_offset", c.aluminium_age_offset);
    get("voltages", c.voltages);
    get("voltage_given_dso", c.voltage_given_dso);
    get("conductor_sizes", c.conductor_sizes);
    get("size_given_voltage", c.size_given_voltage);
    get("voltage_length_offsets", c.voltage_length_offsets);
    get("pilc_length_offset", c.pilc_length_offset);
    get("length_equals_age", c.length_equals_age);
    field = "pilc_age";
    if (doc.contains(field)) c.pilc_age = lognormal_from(doc[field], c.pilc_age);
    field = "xlpe_age";
    if (doc.contains(field)) c.xlpe_age = lognormal_from(doc[field], c.xlpe_age);
    field = "length";
    if (doc.contains(field)) c.length = lognormal_from(doc[field], c.length);
    field = "aluminium_given_insulation";
    if (doc.contains(field)) c.aluminium_given_insulation = scalar_table_from(doc[field]);
    field = "three_core_given_insulation";
    if (doc.contains(field)) c.three_core_given_insulation = scalar_table_from(doc[field]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("fleet." + field + ": " + e.what());
  }
  c.validate();
  return c;
}

Schema fleet_schema(const FleetConfig& config) {
  return Schema{{ColumnSpec::continuous("Length", Transform::kLog1pZScore),
                 ColumnSpec::continuous("Age", Transform::kLog1pZScore),
                 ColumnSpec::categorical("OperationVoltage", config.voltages),
                 ColumnSpec::categorical("DSO", config.dsos),
                 ColumnSpec::categorical("Insulation", kInsulation),
                 ColumnSpec::categorical("ConductorMaterial", kMaterial),
                 ColumnSpec::categorical("ConductorSize", config.conductor_sizes),
                 ColumnSpec::categorical("NumberOfConductors", kConductors)}};
}

TabularDataset generate_fleet(const FleetConfig& config) {
  config.validate();
  TabularDataset out(fleet_schema(config), config.n);
  Rng rng(derive_seed(config.seed, "fleet"));
  const std::vector<double> insulation_shares{config.pilc_share, 1.0 - config.pilc_share};

  for (std::size_t r = 0; r < config.n; ++r) {
    const std::size_t dso = draw(rng, config.dso_shares);
    const std::size_t ins = draw(rng, insulation_shares);
    const std::string& ins_label = kInsulation[ins];
    const std::size_t volt = draw(rng, config.voltage_given_dso.at(config.dsos[dso]));
    const bool aluminium = rng.uniform() < config.aluminium_given_insulation.at(ins_label)[0];
    const bool three_core = rng.uniform() < config.three_core_given_insulation.at(ins_label)[0];
    const std::size_t size = draw(rng, config.size_given_voltage.at(config.voltages[volt]));

    const LogNormalParams& age_params = ins == 0 ? config.pilc_age : config.xlpe_age;
    double log_age = age_params.log_median + config.dso_age_offsets[dso] +
                     (aluminium ? config.aluminium_age_offset : 0.0);
    const double age = std::max(1.0, std::round(rng.lognormal(log_age, age_params.log_std)));

    const double log_length = config.length.log_median + config.voltage_length_offsets[volt] +
                              (ins == 0 ? config.pilc_length_offset : 0.0);
    double length = std::max(1.0, std::round(10.0 * rng.lognormal(log_length, config.length.log_std)) / 10.0);
    if (config.length_equals_age) length = age;

    out.set(r, 0, length);
    out.set(r, 1, age);
    out.set(r, 2, static_cast<double>(volt));
    out.set(r, 3, static_cast<double>(dso));
    out.set(r, 4, static_cast<double>(ins));
    out.set(r, 5, aluminium ? 1.0 : 0.0);
    out.set(r, 6, static_cast<double>(size));
    out.set(r, 7, three_core ? 1.0 : 0.0);
  }
  return out;
}

}  // namespace cablevae
