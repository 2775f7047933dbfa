#include "cablevae/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

namespace fs = std::filesystem;

namespace {

const nlohmann::json& section(const nlohmann::json& doc, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!doc.contains(name)) return empty;
  if (!doc[name].is_object()) throw ConfigError(std::string(name) + ": expected an object");
  return doc[name];
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is required");
  if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::string run_id_of(const std::string& command, const PipelineConfig& config,
                      std::initializer_list<std::string> inputs) {
  std::uint64_t h = fnv1a(command);
  nlohmann::json doc = pipeline_config_to_json(config);
  doc.erase("run_dir");
  h = fnv1a(doc.dump(), h);
  for (const auto& bytes : inputs) h = fnv1a(bytes, h);
  return hex_id(h);
}

std::string csv_text(const TabularDataset& ds) {
  std::ostringstream out;
  write_csv(out, ds);
  return out.str();
}

std::pair<TabularDataset, TabularDataset> pipeline_split(const PipelineConfig& config, const TabularDataset& data) {
  return split(data, config.train_fraction, derive_seed(config.seed, "split"));
}

std::map<std::string, std::size_t> condition_indices(const PipelineConfig& config, const Schema& schema) {
  std::map<std::string, std::size_t> out;
  for (const auto& [name, label] : config.generate_conditions) {
    auto c = schema.find(name);
    if (!c) throw ConfigError("generate.conditions: unknown column '" + name + "'");
    auto idx = schema[*c].category_index(label);
    if (!idx) throw ConfigError("generate.conditions." + name + ": unknown label '" + label + "'");
    out[name] = *idx;
  }
  return out;
}

std::string fixed(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(4);
  s << v;
  return s.str();
}

}  // namespace

PipelineConfig pipeline_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  static const std::set<std::string> allowed{"seed",  "run_dir",   "data",       "model",    "train",
                                             "loss",  "gibbs",     "amputation", "fleet",    "benchmark",
                                             "impute", "generate"};
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError(key + ": unknown section");
  }
  if (!doc.contains("seed")) throw ConfigError("seed: required");
  PipelineConfig c;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.run_dir = doc.value("run_dir", c.run_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("seed/run_dir: ") + e.what());
  }
  const auto& data = section(doc, "data");
  for (const auto& [key, value] : data.items()) {
    if (key != "train_fraction") throw ConfigError("data." + key + ": unknown field");
  }
  try {
    c.train_fraction = data.value("train_fraction", c.train_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("data.train_fraction: ") + e.what());
  }
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");

  c.model = model_config_from_json(section(doc, "model"));
  const auto& train = section(doc, "train");
  c.train = train_config_from_json(train);
  if (!train.contains("seed")) c.train.seed = derive_seed(c.seed, "train");
  c.loss = loss_weights_from_json(section(doc, "loss"));
  const auto& gibbs = section(doc, "gibbs");
  c.gibbs = gibbs_config_from_json(gibbs);
  if (!gibbs.contains("seed")) c.gibbs.seed = derive_seed(c.seed, "gibbs");
  const auto& amp = section(doc, "amputation");
  c.amputation = amputation_spec_from_json(amp);
  if (!amp.contains("seed")) c.amputation.seed = derive_seed(c.seed, "ampute");
  const auto& fleet = section(doc, "fleet");
  c.fleet = fleet_config_from_json(fleet);
  if (!fleet.contains("seed")) c.fleet.seed = derive_seed(c.seed, "fleet");
  const auto& bench = section(doc, "benchmark");
  c.benchmark = benchmark_config_from_json(bench);
  if (!bench.contains("baseline_seed")) c.benchmark.baseline_seed = derive_seed(c.seed, "baseline");
  if (bench.contains("external_report") && !bench["external_report"].is_null()) {
    c.external_report = bench["external_report"].get<std::string>();
  }

  const auto& impute = section(doc, "impute");
  for (const auto& [key, value] : impute.items()) {
    if (key != "method") throw ConfigError("impute." + key + ": unknown field");
  }
  c.impute_method = impute.value("method", c.impute_method);
  const auto& generate = section(doc, "generate");
  for (const auto& [key, value] : generate.items()) {
    if (key != "rows" && key != "conditions") throw ConfigError("generate." + key + ": unknown field");
  }
  try {
    c.generate_rows = generate.value("rows", c.generate_rows);
    if (generate.contains("conditions")) {
      c.generate_conditions = generate["conditions"].get<std::map<std::string, std::string>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generate: ") + e.what());
  }
  if (c.generate_rows < 1) throw ConfigError("generate.rows must be >= 1");

  if (c.train.mode == TrainMode::kSemiSupervised) {
    if (!c.model.target_column) c.model.target_column = c.train.target_column;
    if (c.model.target_column != c.train.target_column) {
      throw ConfigError("model.target_column must match train.target_column");
    }
  } else if (c.model.target_column) {
    throw ConfigError("model.target_column requires train.mode semi_supervised");
  }
  c.train.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  require_file(path, "config");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return pipeline_config_from_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json bench = benchmark_config_to_json(c.benchmark);
  bench["external_report"] = c.external_report ? nlohmann::json(*c.external_report) : nlohmann::json();
  return {{"seed", c.seed},
          {"run_dir", c.run_dir},
          {"data", {{"train_fraction", c.train_fraction}}},
          {"model", model_config_to_json(c.model)},
          {"train", train_config_to_json(c.train)},
          {"loss", loss_weights_to_json(c.loss)},
          {"gibbs", gibbs_config_to_json(c.gibbs)},
          {"amputation", amputation_spec_to_json(c.amputation)},
          {"fleet", fleet_config_to_json(c.fleet)},
          {"benchmark", bench},
          {"impute", {{"method", c.impute_method}}},
          {"generate", {{"rows", c.generate_rows}, {"conditions", c.generate_conditions}}}};
}

CommandResult run_fleetgen(const PipelineConfig& config, const std::string& out_csv) {
  if (out_csv.empty()) throw ConfigError("--out is required");
  const TabularDataset fleet = generate_fleet(config.fleet);
  const std::string text = csv_text(fleet);
  fs::path schema_path(out_csv);
  schema_path.replace_extension(".schema.json");
  write_file(out_csv, text);
  write_file(schema_path, schema_to_json(fleet.schema()).dump(2) + "\n");
  const std::string id = hex_id(fnv1a(fleet_config_to_json(config.fleet).dump()));
  return {id, "fleetgen run=" + id + " rows=" + std::to_string(fleet.rows()) + " out=" + out_csv +
                  " schema=" + schema_path.string()};
}

CommandResult run_train(const PipelineConfig& config, const std::string& data_csv, const std::string& schema_json) {
  require_file(data_csv, "data");
  require_file(schema_json, "schema");
  const Schema schema = load_schema(schema_json);
  const TabularDataset data = load_csv(data_csv, schema);
  auto [train, validation] = pipeline_split(config, data);
  VaeModel model = VaeModel::create(fit_preprocessor(train), config.model, derive_seed(config.seed, "init"));
  FitResult result = config.train.mode == TrainMode::kSemiSupervised
                         ? fit_semi_supervised(std::move(model), train, validation, config.loss, config.train)
                         : fit(std::move(model), train, validation, config.loss, config.train);
  const std::string dir = save_run(result.record, result.model, config.run_dir);
  std::string summary = "train run=" + result.record.run_id +
                        " epochs=" + std::to_string(result.record.epochs.size());
  if (!result.record.epochs.empty()) {
    const auto& last = result.record.epochs.back();
    summary += " train_loss=" + fixed(last.train.total);
    if (last.validation) summary += " val_loss=" + fixed(last.validation->total);
  }
  summary += " dir=" + dir;
  return {result.record.run_id, summary};
}

CommandResult run_generate(const PipelineConfig& config, const std::string& model_json, const std::string& out_csv) {
  require_file(model_json, "model");
  if (out_csv.empty()) throw ConfigError("--out is required");
  const VaeModel model = load_model(model_json);
  const TabularDataset synthetic = inverse_transform(
      sample_prior(model, config.generate_rows, condition_indices(config, model.schema()),
                   derive_seed(config.seed, "generate")),
      model.preprocessor());
  write_file(out_csv, csv_text(synthetic));
  const std::string id = run_id_of("generate", config, {read_file(model_json)});
  return {id, "generate run=" + id + " rows=" + std::to_string(synthetic.rows()) + " out=" + out_csv};
}

CommandResult run_impute(const PipelineConfig& config, const std::string& model_json, const std::string& data_csv,
                         const std::string& out_csv, const std::string& schema_json) {
  require_file(data_csv, "data");
  if (out_csv.empty()) throw ConfigError("--out is required");
  const bool use_model = config.impute_method == "vae" || !model_json.empty();
  std::optional<VaeModel> model;
  Schema schema;
  std::string model_bytes;
  if (use_model) {
    require_file(model_json, "model");
    model = load_model(model_json);
    schema = model->schema();
    model_bytes = read_file(model_json);
  } else {
    require_file(schema_json, "schema");
    schema = load_schema(schema_json);
  }
  const TabularDataset data = load_csv(data_csv, schema);

  ImputationResult result;
  const auto& m = config.impute_method;
  if (m == "vae") result = pseudo_gibbs_impute(*model, data, config.gibbs);
  else if (m == "knn") result = knn_impute(data, config.benchmark.knn_k);
  else if (m == "iterative") result = iterative_impute(data, config.benchmark.iterative_rounds, config.benchmark.ridge_lambda);
  else result = baseline_impute(data, parse_baseline_method(m), config.benchmark.baseline_seed);

  fs::path mask_path(out_csv);
  mask_path.replace_extension(".mask.csv");
  std::ostringstream mask;
  write_provenance_csv(mask, result);
  write_file(out_csv, csv_text(result.completed));
  write_file(mask_path, mask.str());
  const std::string id = run_id_of("impute", config, {read_file(data_csv), model_bytes});
  return {id, "impute run=" + id + " method=" + m + " imputed=" + std::to_string(result.imputed_count()) +
                  " out=" + out_csv + " mask=" + mask_path.string()};
}

CommandResult run_benchmark(const PipelineConfig& config, const std::string& data_csv, const std::string& model_json) {
  require_file(data_csv, "data");
  const bool needs_model = std::find(config.benchmark.imputers.begin(), config.benchmark.imputers.end(), "vae") !=
                           config.benchmark.imputers.end();
  if (needs_model || !model_json.empty()) require_file(model_json, "model");
  if (config.external_report) require_file(*config.external_report, "external report");
  const std::optional<VaeModel> model = model_json.empty() ? std::nullopt : std::optional(load_model(model_json));
  if (!model) throw ConfigError("benchmark: --model is required to read the schema");
  const TabularDataset data = load_csv(data_csv, model->schema());
  auto [train, validation] = pipeline_split(config, data);

  BenchmarkConfig bench = config.benchmark;
  bench.amputation = config.amputation;
  bench.gibbs = config.gibbs;
  BenchmarkRun run = build_benchmark(validation, train, bench, &*model);
  if (config.external_report) {
    std::istringstream ext(read_file(*config.external_report));
    run.report.merge_external(ext);
  }

  const std::string id = run_id_of("benchmark", config, {read_file(data_csv), read_file(model_json)});
  const fs::path dir = fs::path(config.run_dir) / id;
  std::ostringstream report;
  write_report_csv(report, run.report);
  write_file(dir / "report.csv", report.str());
  write_file(dir / "report.json", run.report.metadata.dump(2) + "\n");
  write_file(dir / "amputated.csv", csv_text(run.amputation.amputated));
  const std::size_t offset = train.rows();
  std::vector<std::size_t> eval_rows(validation.rows());
  for (std::size_t i = 0; i < eval_rows.size(); ++i) eval_rows[i] = offset + i;
  for (const auto& result : run.results) {
    write_file(dir / ("imputed_" + result.imputer + ".csv"), csv_text(result.completed.select_rows(eval_rows)));
  }

  std::string summary = "benchmark run=" + id;
  for (const auto& column : config.amputation.columns) {
    for (const auto& name : bench.imputers) {
      const BenchmarkRow* row = run.report.find(name, column);
      if (row && !row->error) summary += " " + name + "_mae=" + fixed(row->mae);
    }
  }
  summary += " dir=" + dir.string();
  return {id, summary};
}

CommandResult run_validate(const PipelineConfig& config, const std::string& data_csv, const std::string& model_json) {
  require_file(data_csv, "data");
  require_file(model_json, "model");
  const VaeModel model = load_model(model_json);
  const TabularDataset data = load_csv(data_csv, model.schema());
  const TabularDataset real = pipeline_split(config, data).first;
  const TabularDataset synthetic = inverse_transform(
      sample_prior(model, real.rows(), condition_indices(config, model.schema()), derive_seed(config.seed, "generate")),
      model.preprocessor());

  const std::string id = run_id_of("validate", config, {read_file(data_csv), read_file(model_json)});
  const fs::path dir = fs::path(config.run_dir) / id;
  const auto rows = compare_real_synthetic(real, synthetic);
  std::ostringstream table;
  write_comparison_csv(table, rows);
  write_file(dir / "comparison.csv", table.str());
  write_file(dir / "synthetic.csv", csv_text(synthetic));
  for (std::size_t c = 0; c < model.schema().size(); ++c) {
    std::ostringstream curve;
    curve << "source,value,fraction\n";
    for (const auto& [label, ds] : {std::pair<const char*, const TabularDataset*>{"real", &real}, {"synthetic", &synthetic}}) {
      for (const auto& [v, f] : ecdf(column_values(*ds, c))) {
        curve << label << "," << format_double(v) << "," << format_double(f) << "\n";
      }
    }
    write_file(dir / ("ecdf_" + model.schema()[c].name + ".csv"), curve.str());
  }

  std::string summary = "validate run=" + id;
  for (const auto& row : rows) {
    if (row.scale == "log") summary += " ks_log_" + row.feature + "=" + fixed(row.distance);
  }
  summary += " dir=" + dir.string();
  return {id, summary};
}

}  // namespace cablevae
