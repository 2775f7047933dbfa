#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cablevae/error.hpp"
#include "cablevae/model.hpp"
#include "cablevae/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::string data;
  std::string schema;
  std::string model;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<std::string> run_dir;
  std::optional<std::size_t> rows;
  std::optional<std::string> method;
};

cablevae::PipelineConfig effective_config(const Options& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw cablevae::ConfigError("config '" + o.config + "' does not exist");
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw cablevae::ConfigError(o.config + ": " + e.what());
    }
  }
  // Overrides are applied to the document so derived seeds follow --seed.
  if (o.seed) doc["seed"] = *o.seed;
  if (!doc.contains("seed")) throw cablevae::ConfigError("seed: required (set it in --config or pass --seed)");
  if (o.epochs) doc["train"]["epochs"] = *o.epochs;
  if (o.lr) doc["train"]["learning_rate"] = *o.lr;
  if (o.run_dir) doc["run_dir"] = *o.run_dir;
  if (o.rows) doc["generate"]["rows"] = *o.rows;
  if (o.method) doc["impute"]["method"] = *o.method;
  return cablevae::pipeline_config_from_json(doc);
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "pipeline configuration (JSON)");
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--run-dir", o.run_dir, "directory for run artifacts");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed-type tabular VAE for cable fleet registers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cablevae ") + cablevae::kVersion + " (model format " +
                                        std::to_string(cablevae::kModelFormatVersion) + ")");
  Options o;

  auto* fleetgen = app.add_subcommand("fleetgen", "write a synthetic cable fleet");
  add_common(fleetgen, o);
  fleetgen->add_option("--rows", o.rows, "override fleet.n");
  fleetgen->add_option("--out", o.out, "output CSV")->required();

  auto* train = app.add_subcommand("train", "fit a model");
  add_common(train, o);
  train->add_option("--data", o.data, "training CSV")->required();
  train->add_option("--schema", o.schema, "schema JSON")->required();
  train->add_option("--epochs", o.epochs, "override train.epochs");
  train->add_option("--lr", o.lr, "override train.learning_rate");

  auto* generate = app.add_subcommand("generate", "sample synthetic rows");
  add_common(generate, o);
  generate->add_option("--model", o.model, "model JSON")->required();
  generate->add_option("--rows", o.rows, "rows to draw");
  generate->add_option("--out", o.out, "output CSV")->required();

  auto* impute = app.add_subcommand("impute", "fill missing cells");
  add_common(impute, o);
  impute->add_option("--data", o.data, "CSV with missing cells")->required();
  impute->add_option("--model", o.model, "model JSON (required for vae)");
  impute->add_option("--schema", o.schema, "schema JSON for baseline methods");
  impute->add_option("--method", o.method, "vae, median, mean, mode, random, knn or iterative");
  impute->add_option("--out", o.out, "output CSV")->required();

  auto* benchmark = app.add_subcommand("benchmark", "amputation benchmark against baselines");
  add_common(benchmark, o);
  benchmark->add_option("--data", o.data, "fully observed CSV")->required();
  benchmark->add_option("--model", o.model, "model JSON")->required();

  auto* validate = app.add_subcommand("validate", "compare real and synthetic distributions");
  add_common(validate, o);
  validate->add_option("--data", o.data, "real CSV")->required();
  validate->add_option("--model", o.model, "model JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Options eff = o;
    if (command == "fleetgen" && o.rows) eff.rows.reset();
    cablevae::PipelineConfig config = effective_config(eff);
    if (command == "fleetgen" && o.rows) config.fleet.n = *o.rows;
    cablevae::CommandResult result;
    if (command == "fleetgen") result = cablevae::run_fleetgen(config, o.out);
    else if (command == "train") result = cablevae::run_train(config, o.data, o.schema);
    else if (command == "generate") result = cablevae::run_generate(config, o.model, o.out);
    else if (command == "impute") result = cablevae::run_impute(config, o.model, o.data, o.out, o.schema);
    else if (command == "benchmark") result = cablevae::run_benchmark(config, o.data, o.model);
    else result = cablevae::run_validate(config, o.data, o.model);
    std::cout << result.summary << "\n";
    return 0;
  } catch (const cablevae::ConfigError& e) {
    std::cerr << "error command=" << command << " kind=config message=\"" << e.what() << "\"\n";
    return 2;
  } catch (const cablevae::DivergenceError& e) {
    std::cerr << "error command=" << command << " kind=divergence message=\"" << e.what() << "\"\n";
    return 4;
  } catch (const cablevae::DataError& e) {
    std::cerr << "error command=" << command << " kind=data message=\"" << e.what() << "\"\n";
    return 3;
  } catch (const cablevae::ShapeError& e) {
    std::cerr << "error command=" << command << " kind=shape message=\"" << e.what() << "\"\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error command=" << command << " kind=internal message=\"" << e.what() << "\"\n";
    return 1;
  }
}
