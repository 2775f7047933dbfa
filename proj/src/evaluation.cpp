#include "cablevae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

namespace {

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::kMcar: return "MCAR";
    case Mechanism::kMar: return "MAR";
    case Mechanism::kMnar: return "MNAR";
  }
  return "?";
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// 1-based ranks with ties sharing their average rank.
std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t m = i; m < j; ++m) ranks[order[m]] = rank;
    i = j;
  }
  return ranks;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Amputation

void AmputationSpec::validate(const Schema& schema) const {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("amputation.fraction must lie strictly between 0 and 1");
  if (columns.empty()) throw ConfigError("amputation.columns must not be empty");
  std::set<std::string> seen;
  for (const auto& name : columns) {
    if (!schema.find(name)) throw ConfigError("amputation.columns: unknown column '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError("amputation.columns: '" + name + "' listed twice");
  }
  if (mechanism == Mechanism::kMar) {
    if (!driver) throw ConfigError("amputation.driver is required for MAR");
    if (!schema.find(*driver)) throw ConfigError("amputation.driver: unknown column '" + *driver + "'");
    if (seen.count(*driver)) throw ConfigError("amputation.driver must differ from the target columns");
  }
}

nlohmann::json amputation_spec_to_json(const AmputationSpec& s) {
  nlohmann::json doc = {{"columns", s.columns},
                        {"fraction", s.fraction},
                        {"mechanism", mechanism_name(s.mechanism)},
                        {"seed", s.seed}};
  doc["driver"] = s.driver ? nlohmann::json(*s.driver) : nlohmann::json();
  return doc;
}

AmputationSpec amputation_spec_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("amputation: expected an object");
  static const std::set<std::string> allowed{"columns", "fraction", "mechanism", "driver", "seed"};
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError("amputation." + key + ": unknown field");
  }
  AmputationSpec s;
  try {
    s.columns = doc.value("columns", s.columns);
    s.fraction = doc.value("fraction", s.fraction);
    s.seed = doc.value("seed", s.seed);
    if (doc.contains("driver") && !doc["driver"].is_null()) s.driver = doc["driver"].get<std::string>();
    const auto m = doc.value("mechanism", std::string(mechanism_name(s.mechanism)));
    if (m == "MCAR" || m == "mcar") s.mechanism = Mechanism::kMcar;
    else if (m == "MAR" || m == "mar") s.mechanism = Mechanism::kMar;
    else if (m == "MNAR" || m == "mnar") s.mechanism = Mechanism::kMnar;
    else throw ConfigError("amputation.mechanism: expected MCAR, MAR or MNAR, got '" + m + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("amputation: ") + e.what());
  }
  return s;
}

Amputation ampute(const TabularDataset& dataset, const AmputationSpec& spec) {
  const auto& schema = dataset.schema();
  spec.validate(schema);
  Amputation out{dataset, {}};
  const std::optional<std::size_t> driver = spec.driver ? schema.find(*spec.driver) : std::nullopt;

  for (const auto& name : spec.columns) {
    const std::size_t c = schema.index_of(name);
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < dataset.rows(); ++r) {
      if (dataset.observed(r, c)) rows.push_back(r);
    }
    const auto count = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(rows.size())));
    if (count == 0) throw DataError("amputation of '" + name + "' would mask zero cells");

    std::vector<double> weights(rows.size(), 1.0);
    if (spec.mechanism != Mechanism::kMcar) {
      const std::size_t source = spec.mechanism == Mechanism::kMar ? *driver : c;
      std::vector<std::size_t> ranked;
      std::vector<double> values;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (dataset.observed(rows[i], source)) {
          ranked.push_back(i);
          values.push_back(dataset.value(rows[i], source));
        }
      }
      const auto ranks = average_ranks(values);
      for (std::size_t k = 0; k < ranked.size(); ++k) weights[ranked[k]] = ranks[k];
    }

    // Weighted sampling without replacement: keep the largest log(u) / w.
    Rng rng(derive_seed(spec.seed, "ampute:" + name));
    std::vector<std::pair<double, std::size_t>> keys(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      keys[i] = {std::log(1.0 - rng.uniform()) / weights[i], i};
    }
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(count), keys.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < count; ++i) chosen.push_back(rows[keys[i].second]);
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t r : chosen) {
      out.truth.push_back({r, c, dataset.value(r, c)});
      out.amputated.set_missing(r, c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

Scores score(const std::vector<double>& truth, const std::vector<double>& imputed) {
  if (truth.size() != imputed.size()) throw ShapeError("score: truth and imputed sizes differ");
  if (truth.size() < 2) throw DataError("score: need at least two cells");
  const double ybar = mean_of(truth);
  double abs_sum = 0.0, sq_sum = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double e = imputed[i] - truth[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    tot += (truth[i] - ybar) * (truth[i] - ybar);
  }
  if (tot == 0.0) throw DataError("score: truth has zero variance, R^2 undefined");
  const double n = static_cast<double>(truth.size());
  return {abs_sum / n, std::sqrt(sq_sum / n), 1.0 - sq_sum / tot};
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DataError("ks_statistic: samples must be non-empty");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

std::vector<std::pair<double, double>> ecdf(std::vector<double> sample) {
  if (sample.empty()) throw DataError("ecdf: sample must be non-empty");
  std::sort(sample.begin(), sample.end());
  std::vector<std::pair<double, double>> curve;
  const double n = static_cast<double>(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (i + 1 < sample.size() && sample[i + 1] == sample[i]) continue;
    curve.emplace_back(sample[i], static_cast<double>(i + 1) / n);
  }
  return curve;
}

std::vector<double> column_values(const TabularDataset& dataset, std::size_t column) {
  std::vector<double> v;
  for (std::size_t r = 0; r < dataset.rows(); ++r) {
    if (dataset.observed(r, column)) v.push_back(dataset.value(r, column));
  }
  return v;
}

std::vector<ComparisonRow> compare_real_synthetic(const TabularDataset& real, const TabularDataset& synthetic) {
  if (!(real.schema() == synthetic.schema())) throw DataError("compare: schemas differ");
  const auto& schema = real.schema();
  std::vector<ComparisonRow> rows;
  for (std::size_t c = 0; c < schema.size(); ++c) {
    auto a = column_values(real, c);
    auto b = column_values(synthetic, c);
    if (a.empty() || b.empty()) throw DataError("compare: column '" + schema[c].name + "' has no observed values");
    auto row = [&](const std::string& scale, const std::vector<double>& x, const std::vector<double>& y, double dist) {
      rows.push_back({schema[c].name, scale, mean_of(x), sample_std(x), mean_of(y), sample_std(y), dist});
    };
    if (schema[c].is_categorical()) {
      std::vector<double> fa(schema[c].category_count(), 0.0), fb(fa.size(), 0.0);
      for (double v : a) fa[static_cast<std::size_t>(v)] += 1.0 / static_cast<double>(a.size());
      for (double v : b) fb[static_cast<std::size_t>(v)] += 1.0 / static_cast<double>(b.size());
      double tvd = 0.0;
      for (std::size_t k = 0; k < fa.size(); ++k) tvd += std::abs(fa[k] - fb[k]);
      row("categories", a, b, 0.5 * tvd);
      continue;
    }
    if (schema[c].transform == Transform::kLog1pZScore) {
      std::vector<double> la(a.size()), lb(b.size());
      std::transform(a.begin(), a.end(), la.begin(), [](double v) { return std::log1p(v); });
      std::transform(b.begin(), b.end(), lb.begin(), [](double v) { return std::log1p(v); });
      row("log", la, lb, ks_statistic(la, lb));
    }
    row("raw", a, b, ks_statistic(a, b));
  }
  return rows;
}

void write_comparison_csv(std::ostream& out, const std::vector<ComparisonRow>& rows) {
  out << "feature,scale,real_mean,real_std,synthetic_mean,synthetic_std,metric,distance\n";
  for (const auto& r : rows) {
    out << r.feature << "," << r.scale << "," << format_double(r.real_mean) << "," << format_double(r.real_std)
        << "," << format_double(r.synthetic_mean) << "," << format_double(r.synthetic_std) << ","
        << (r.scale == "categories" ? "tvd" : "ks") << "," << format_double(r.distance) << "\n";
  }
}

void write_ecdf_csv(std::ostream& out, const std::vector<std::pair<double, double>>& curve) {
  out << "value,fraction\n";
  for (const auto& [v, f] : curve) out << format_double(v) << "," << format_double(f) << "\n";
}

// ---------------------------------------------------------------------------
// Benchmark

void BenchmarkConfig::validate() const {
  static const std::set<std::string> known{"vae", "median", "mean", "mode", "random", "knn", "iterative"};
  if (imputers.empty()) throw ConfigError("benchmark.imputers must not be empty");
  for (const auto& name : imputers) {
    if (!known.count(name)) throw ConfigError("benchmark.imputers: unknown imputer '" + name + "'");
  }
  if (knn_k < 1) throw ConfigError("benchmark.knn_k must be >= 1");
  if (iterative_rounds < 1) throw ConfigError("benchmark.iterative_rounds must be >= 1");
  if (!(ridge_lambda >= 0.0)) throw ConfigError("benchmark.ridge_lambda must be >= 0");
  gibbs.validate();
}

nlohmann::json benchmark_config_to_json(const BenchmarkConfig& c) {
  return {{"imputers", c.imputers},
          {"knn_k", c.knn_k},
          {"iterative_rounds", c.iterative_rounds},
          {"ridge_lambda", c.ridge_lambda},
          {"baseline_seed", c.baseline_seed}};
}

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("benchmark: expected an object");
  static const std::set<std::string> allowed{"imputers", "knn_k", "iterative_rounds", "ridge_lambda",
                                             "baseline_seed", "external_report"};
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError("benchmark." + key + ": unknown field");
  }
  BenchmarkConfig c;
  try {
    c.imputers = doc.value("imputers", c.imputers);
    c.knn_k = doc.value("knn_k", c.knn_k);
    c.iterative_rounds = doc.value("iterative_rounds", c.iterative_rounds);
    c.ridge_lambda = doc.value("ridge_lambda", c.ridge_lambda);
    c.baseline_seed = doc.value("baseline_seed", c.baseline_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("benchmark: ") + e.what());
  }
  return c;
}

const BenchmarkRow* BenchmarkReport::find(const std::string& imputer, const std::string& column,
                                          const std::string& scale) const {
  for (const auto& r : rows) {
    if (r.imputer == imputer && r.column == column && r.scale == scale) return &r;
  }
  return nullptr;
}

void BenchmarkReport::merge_external(std::istream& csv) {
  std::string line;
  if (!std::getline(csv, line)) throw DataError("external report is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "imputer,column,scale,mae,rmse,r2") throw DataError("external report: unexpected header '" + line + "'");
  std::size_t n = 1;
  while (std::getline(csv, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw DataError("external report row " + std::to_string(n) + ": expected 6 fields");
    BenchmarkRow row{f[0], f[1], f[2]};
    try {
      row.mae = std::stod(f[3]);
      row.rmse = std::stod(f[4]);
      row.r2 = std::stod(f[5]);
    } catch (const std::exception&) {
      throw DataError("external report row " + std::to_string(n) + ": non-numeric metric");
    }
    row.external = true;
    rows.push_back(std::move(row));
  }
}

namespace {

ImputationResult run_imputer(const std::string& name, const TabularDataset& data, const BenchmarkConfig& config,
                             const VaeModel* model) {
  if (name == "vae") {
    if (!model) throw ConfigError("the vae imputer needs a trained model");
    return pseudo_gibbs_impute(*model, data, config.gibbs);
  }
  if (name == "knn") return knn_impute(data, config.knn_k);
  if (name == "iterative") return iterative_impute(data, config.iterative_rounds, config.ridge_lambda);
  return baseline_impute(data, parse_baseline_method(name), config.baseline_seed);
}

}  // namespace

BenchmarkRun build_benchmark(const TabularDataset& dataset, const TabularDataset& reference,
                             const BenchmarkConfig& config, const VaeModel* model) {
  config.validate();
  const auto& schema = dataset.schema();
  for (const auto& name : config.amputation.columns) {
    auto c = schema.find(name);
    if (c && schema[*c].is_categorical()) throw ConfigError("benchmark: amputated column '" + name + "' must be continuous");
  }
  BenchmarkRun run{{}, ampute(dataset, config.amputation), {}};
  const bool has_reference = reference.rows() > 0;
  if (has_reference && !(reference.schema() == schema)) throw DataError("benchmark: reference schema differs");
  const TabularDataset combined = has_reference ? reference.concat(run.amputation.amputated) : run.amputation.amputated;
  const std::size_t offset = has_reference ? reference.rows() : 0;

  nlohmann::json means = nlohmann::json::object();
  nlohmann::json masked = nlohmann::json::object();
  for (const auto& name : config.amputation.columns) {
    const std::size_t c = schema.index_of(name);
    std::vector<double> truth;
    for (const auto& cell : run.amputation.truth) {
      if (cell.column == c) truth.push_back(cell.value);
    }
    const auto observed = column_values(combined, c);
    masked[name] = truth.size();
    means[name] = {{"masked_truth_mean", mean_of(truth)},
                   {"observed_mean", observed.empty() ? 0.0 : mean_of(observed)}};
  }
  run.report.metadata = {{"amputation", amputation_spec_to_json(config.amputation)},
                         {"benchmark", benchmark_config_to_json(config)},
                         {"gibbs", gibbs_config_to_json(config.gibbs)},
                         {"reference_rows", reference.rows()},
                         {"evaluation_rows", dataset.rows()},
                         {"masked_cells", masked},
                         {"means", means},
                         {"r2_baseline", "mean of the masked truth cells"},
                         {"metric_scale", "raw values after inverse transform; log rows use log1p"},
                         {"std_convention", "sample (ddof=1)"}};

  nlohmann::json failures = nlohmann::json::object();
  for (const auto& name : config.imputers) {
    std::vector<BenchmarkRow> rows;
    try {
      ImputationResult result = run_imputer(name, combined, config, model);
      for (const auto& column : config.amputation.columns) {
        const std::size_t c = schema.index_of(column);
        std::vector<double> truth, imputed, log_truth, log_imputed;
        for (const auto& cell : run.amputation.truth) {
          if (cell.column != c) continue;
          truth.push_back(cell.value);
          imputed.push_back(result.completed.value(offset + cell.row, c));
        }
        const Scores raw = score(truth, imputed);
        rows.push_back({name, column, "raw", raw.mae, raw.rmse, raw.r2});
        const bool loggable = std::all_of(truth.begin(), truth.end(), [](double v) { return v > -1.0; }) &&
                              std::all_of(imputed.begin(), imputed.end(), [](double v) { return v > -1.0; });
        if (loggable) {
          for (std::size_t i = 0; i < truth.size(); ++i) {
            log_truth.push_back(std::log1p(truth[i]));
            log_imputed.push_back(std::log1p(imputed[i]));
          }
          const Scores lg = score(log_truth, log_imputed);
          rows.push_back({name, column, "log", lg.mae, lg.rmse, lg.r2});
        }
      }
      run.results.push_back(std::move(result));
    } catch (const std::exception& e) {
      rows.clear();
      for (const auto& column : config.amputation.columns) {
        for (const char* scale : {"raw", "log"}) {
          BenchmarkRow row{name, column, scale};
          row.error = e.what();
          rows.push_back(std::move(row));
        }
      }
      failures[name] = e.what();
    }
    run.report.rows.insert(run.report.rows.end(), rows.begin(), rows.end());
  }
  run.report.metadata["failures"] = failures;
  return run;
}

void write_report_csv(std::ostream& out, const BenchmarkReport& report) {
  out << "imputer,column,scale,mae,rmse,r2\n";
  for (const auto& r : report.rows) {
    out << r.imputer << "," << r.column << "," << r.scale << ",";
    if (r.error) {
      out << ",,\n";
    } else {
      out << format_double(r.mae) << "," << format_double(r.rmse) << "," << format_double(r.r2) << "\n";
    }
  }
}

}  // namespace cablevae
