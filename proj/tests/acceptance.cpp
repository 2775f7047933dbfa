// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "cablevae/evaluation.hpp"
#include "cablevae/fleetgen.hpp"
#include "cablevae/imputation.hpp"
#include "cablevae/objective.hpp"
#include "cablevae/trainer.hpp"
#include "helpers.hpp"

using namespace cablevae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

constexpr std::size_t kSeeds = 5;

// Training used where a model must fit the fleet well (criteria 4-7): the
// Table III learning rate needs far more steps than 8000 rows provide.
TrainConfig fitted_config(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.epochs = 60;
  c.seed = seed;
  return c;
}

struct SeedModel {
  TabularDataset train;
  TabularDataset validation;
  VaeModel model;
};

SeedModel train_on_fleet(std::uint64_t seed, const FleetConfig& base, const TrainConfig& tc,
                         const objective::LossWeights& weights) {
  FleetConfig fc = base;
  fc.seed = seed;
  auto [train, val] = split(generate_fleet(fc), 0.8, seed);
  VaeModel init = VaeModel::create(fit_preprocessor(train), {}, seed);
  FitResult r = fit(std::move(init), train, val, weights, tc);
  return {std::move(train), std::move(val), std::move(r.model)};
}

// Default-fleet models shared by criteria 4, 5 and 6.
std::vector<SeedModel>& fleet_models() {
  static std::vector<SeedModel> models = [] {
    std::vector<SeedModel> out;
    for (std::uint64_t s = 0; s < kSeeds; ++s) out.push_back(train_on_fleet(s, {}, fitted_config(s), {}));
    return out;
  }();
  return models;
}

std::vector<BenchmarkRun>& fleet_benchmarks() {
  static std::vector<BenchmarkRun> runs = [] {
    std::vector<BenchmarkRun> out;
    for (std::uint64_t s = 0; s < kSeeds; ++s) {
      const SeedModel& m = fleet_models()[s];
      BenchmarkConfig bc;
      bc.amputation = {.columns = {"Age"}, .fraction = 0.49, .mechanism = Mechanism::kMnar, .seed = s};
      bc.gibbs.seed = s;
      bc.baseline_seed = s;
      out.push_back(build_benchmark(m.validation, m.train, bc, &m.model));
    }
    return out;
  }();
  return runs;
}

// 1 -------------------------------------------------------------------------
// Smallest |input| over all ReLU nodes in one forward pass.
double relu_margin(const autodiff::Graph& g, const autodiff::ParameterSet& params, const autodiff::Bindings& inputs) {
  const auto ev = autodiff::forward(g, params, inputs, {g.output("loss")});
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& node = g.node({i});
    if (node.kind != autodiff::OpKind::kRelu) continue;
    const Tensor& pre = ev.at(node.args[0]);
    for (std::size_t k = 0; k < pre.size(); ++k) margin = std::min(margin, std::abs(pre[k]));
  }
  return margin;
}

Outcome gradient_correctness() {
  constexpr double kStep = 1e-5;
  std::size_t passed = 0, redrawn = 0;
  double worst = 0.0;
  std::string failures;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    // Central differences straddling a ReLU kink measure the average of two
    // slopes, so draws with a pre-activation within 100 steps of zero are
    // redrawn.
    for (std::uint64_t draw = 0;; ++draw) {
      const std::uint64_t seed = derive_seed(trial, "c1." + std::to_string(draw));
      Rng rng(seed);
      const TabularDataset data = testing::small_dataset(4 + rng.index(5), derive_seed(seed, "data"));
      const VaeModel model = VaeModel::create(fit_preprocessor(testing::small_dataset(30, seed)),
                                              {.hidden_dim = 16, .latent_dim = 4}, derive_seed(seed, "init"));
      const objective::LossWeights w{0.05 + 0.9 * rng.uniform(), 0.01 + rng.uniform()};
      const auto graph = build_training_graph(model, w);
      autodiff::Bindings inputs =
          encoder_bindings(model, transform(data, model.preprocessor()), testing::iota_rows(data.rows()));
      inputs["noise"] = testing::normal_tensor(rng, data.rows(), 4);
      if (relu_margin(graph, model.parameters(), inputs) < 100.0 * kStep) {
        ++redrawn;
        continue;
      }
      const auto report =
          autodiff::check_gradients(graph, model.parameters(), inputs, graph.output("loss"), kStep, 1e-4);
      if (report.passed) ++passed;
      for (const auto& e : report.entries) {
        worst = std::max(worst, e.max_relative_error);
        if (e.max_relative_error > 1e-4) {
          failures += " trial" + std::to_string(trial) + "[" + e.parameter + "[" + std::to_string(e.worst_index) +
                      "] analytic " + std::to_string(e.analytic) + " numeric " + std::to_string(e.numeric) + "]";
        }
      }
      break;
    }
  }
  return {passed == 100, std::to_string(passed) + "/100 instances (" + std::to_string(redrawn) +
                             " draws near a ReLU kink redrawn), worst relative error " + std::to_string(worst) +
                             failures};
}

// 2 -------------------------------------------------------------------------
Outcome loss_oracles() {
  using namespace objective;
  auto col = [](std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor::matrix(n, 1, std::move(v));
  };
  const std::vector<std::pair<double, double>> cases{
      {continuous_nll(col({0.0}), col({0.0})), 0.918938533},
      {continuous_nll(col({0.0}), col({1.0})), 1.418938533},
      {continuous_nll(col({0.0, 0.0}), col({1.0, 2.0})), 2.168938533},
      {categorical_ce({{0}}, {Tensor({1, 4})}), 1.386294361},
      {categorical_ce({{1}}, {Tensor::matrix(1, 2, {-1000.0, 1000.0})}), 0.0},
      {categorical_ce({{0}, {0}}, {Tensor({1, 2}), Tensor({1, 5})}), 2.302585093},
      {kl_divergence(col({0.0}), col({0.0})), 0.0},
      {kl_divergence(col({1.0}), col({0.0})), 0.5},
      {kl_divergence(col({0.0}), col({std::log(4.0)})), 0.806852819},
      {combine({0.07127, 0.0275}, 2.0, 1.0, 0.5), 1.085020},
  };
  double worst = 0.0;
  for (const auto& [got, want] : cases) worst = std::max(worst, std::abs(got - want));
  return {worst <= 1e-9, std::to_string(cases.size()) + " examples, max abs error " + std::to_string(worst)};
}

// 3 -------------------------------------------------------------------------
Outcome training_trend() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    FleetConfig fc;
    fc.seed = s;
    auto [train, val] = split(generate_fleet(fc), 0.8, s);
    TrainConfig tc;
    tc.seed = s;
    const FitResult r = fit(VaeModel::create(fit_preprocessor(train), {}, s), train, val, {}, tc);
    const auto& e = r.record.epochs;
    const double tr = e.back().train.total / e.front().train.total;
    const double va = e.back().validation->total / e.front().validation->total;
    int inc_tr = 0, inc_va = 0;
    for (std::size_t i = 1; i < e.size(); ++i) {
      inc_tr += e[i].train.total > e[i - 1].train.total;
      inc_va += e[i].validation->total > e[i - 1].validation->total;
    }
    ok = ok && e.size() == 16 && tr < 0.25 && va < 0.25 && inc_tr <= 2 && inc_va <= 2;
    detail += " seed" + std::to_string(s) + "[train " + fmt(tr, 3) + " val " + fmt(va, 3) + " inc " +
              std::to_string(inc_tr) + "/" + std::to_string(inc_va) + "]";
  }
  return {ok, "final/epoch0 ratios:" + detail};
}

// 4 -------------------------------------------------------------------------
Outcome synthetic_fidelity() {
  const SeedModel& m = fleet_models()[0];
  const TabularDataset synthetic =
      inverse_transform(sample_prior(m.model, m.train.rows(), {}, derive_seed(0, "generate")), m.model.preprocessor());
  double ks_age = 1.0, ks_len = 1.0, real_age = 0.0, syn_age = 0.0;
  for (const auto& row : compare_real_synthetic(m.train, synthetic)) {
    if (row.scale == "log" && row.feature == "Age") ks_age = row.distance;
    if (row.scale == "log" && row.feature == "Length") ks_len = row.distance;
    if (row.scale == "raw" && row.feature == "Age") {
      real_age = row.real_mean;
      syn_age = row.synthetic_mean;
    }
  }
  const double rel = std::abs(syn_age - real_age) / real_age;
  return {ks_age <= 0.15 && ks_len <= 0.15 && rel <= 0.15,
          "KS LogAge " + fmt(ks_age) + ", KS LogLength " + fmt(ks_len) + ", mean Age " + fmt(syn_age, 2) +
              " vs " + fmt(real_age, 2) + " (" + fmt(100.0 * rel, 1) + "%)"};
}

// 5 -------------------------------------------------------------------------
Outcome benchmark_ordering() {
  bool ok = true;
  std::string detail;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const BenchmarkReport& rep = fleet_benchmarks()[s].report;
    auto mae = [&](const char* n) { return rep.find(n, "Age")->mae; };
    auto r2 = [&](const char* n) { return rep.find(n, "Age")->r2; };
    const bool seed_ok = mae("vae") < mae("median") && mae("vae") < mae("mean") && mae("mean") < mae("mode") &&
                         mae("mean") < mae("random") && r2("vae") > 0.5 && r2("random") < 0.0;
    ok = ok && seed_ok;
    detail += " seed" + std::to_string(s) + "[vae " + fmt(mae("vae"), 2) + " median " + fmt(mae("median"), 2) +
              " mean " + fmt(mae("mean"), 2) + " mode " + fmt(mae("mode"), 2) + " random " + fmt(mae("random"), 2) +
              " r2 vae " + fmt(r2("vae"), 3) + " random " + fmt(r2("random"), 3) + "]";
  }
  return {ok, "MAE/R2 on masked Age:" + detail};
}

// 6 -------------------------------------------------------------------------
Outcome near_parity() {
  bool ok = true;
  std::string detail;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    const BenchmarkReport& rep = fleet_benchmarks()[s].report;
    const double vae = rep.find("vae", "Age")->mae;
    const double knn = rep.find("knn", "Age")->mae;
    const double it = rep.find("iterative", "Age")->mae;
    const double dk = vae / knn - 1.0, di = vae / it - 1.0;
    ok = ok && std::abs(dk) <= 0.25 && std::abs(di) <= 0.25;
    detail += " seed" + std::to_string(s) + "[vae " + fmt(vae, 2) + " knn " + fmt(knn, 2) + " (" +
              fmt(100.0 * dk, 1) + "%) iterative " + fmt(it, 2) + " (" + fmt(100.0 * di, 1) + "%)]";
  }
  return {ok, "MAE ratios:" + detail};
}

// 7 -------------------------------------------------------------------------
Outcome deterministic_dependency() {
  FleetConfig fc;
  fc.length_equals_age = true;
  // Equal reconstruction weights; see README for why the default alpha caps
  // R2 below 0.9 on this oracle.
  const SeedModel m = train_on_fleet(0, fc, fitted_config(0), {0.5, 0.0275});
  BenchmarkConfig bc;
  bc.amputation = {.columns = {"Length"}, .fraction = 0.3, .mechanism = Mechanism::kMcar, .seed = 0};
  bc.imputers = {"vae"};
  const BenchmarkRun run = build_benchmark(m.validation, m.train, bc, &m.model);
  const BenchmarkRow* raw = run.report.find("vae", "Length");
  const BenchmarkRow* log = run.report.find("vae", "Length", "log");
  return {raw->r2 > 0.9, "R2 on " + std::to_string(run.amputation.truth.size()) + " masked cells: raw " +
                             fmt(raw->r2) + ", log " + fmt(log->r2)};
}

// 8 -------------------------------------------------------------------------
Outcome semi_supervised_gain() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    FleetConfig fc;
    fc.seed = s;
    auto [train_full, val] = split(generate_fleet(fc), 0.8, s);
    // 30% of training Age targets stay observed.
    const TabularDataset train =
        ampute(train_full, {.columns = {"Age"}, .fraction = 0.7, .mechanism = Mechanism::kMcar, .seed = s}).amputated;
    ModelConfig mc;
    mc.target_column = "Age";
    TrainConfig tc;
    tc.seed = s;
    tc.mode = TrainMode::kSemiSupervised;
    tc.target_column = "Age";
    const FitResult r = fit_semi_supervised(VaeModel::create(fit_preprocessor(train), mc, s), train, val, {}, tc);

    TabularDataset held = val;
    std::vector<double> truth;
    for (std::size_t i = 0; i < held.rows(); ++i) {
      truth.push_back(val.value(i, 1));
      held.set_missing(i, 1);
    }
    const auto semi = pseudo_gibbs_impute(r.model, held, {.seed = s});
    const auto mean = baseline_impute(held, BaselineMethod::kMean, s, train);
    std::vector<double> ps, pm;
    for (std::size_t i = 0; i < held.rows(); ++i) {
      ps.push_back(semi.completed.value(i, 1));
      pm.push_back(mean.completed.value(i, 1));
    }
    const double rs = score(truth, ps).rmse, rm = score(truth, pm).rmse;
    ok = ok && rs < rm;
    detail += " seed" + std::to_string(s) + "[semi " + fmt(rs, 2) + " mean " + fmt(rm, 2) + "]";
  }
  return {ok, "held-out Age RMSE:" + detail};
}

// 9 -------------------------------------------------------------------------
struct CliRun {
  int code;
  std::string out;
};

CliRun run_cli(const std::string& cli, const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + args + " 2>&1";
  CliRun r{-1, {}};
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[512];
  while (fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().filename() == "run.json") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    files[fs::relative(entry.path(), root).string()] = s.str();
  }
  return files;
}

Outcome cli_reproducibility(const std::string& cli, const fs::path& workdir) {
  if (cli.empty()) return {false, "no --cli given"};
  const std::string config = R"({"seed": 11, "fleet": {"n": 2000}, "train": {"epochs": 3},
    "gibbs": {"iterations": 10, "burn_in": 5}, "generate": {"rows": 300}})";
  std::vector<std::string> transcript[2];
  std::map<std::string, std::string> trees[2];
  bool all_ok = true;
  for (int k = 0; k < 2; ++k) {
    const fs::path dir = workdir / (k == 0 ? "first" : "second");
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << config;
    auto step = [&](const std::string& args) {
      const CliRun r = run_cli(cli, dir, args);
      all_ok = all_ok && r.code == 0;
      transcript[k].push_back(r.out);
      return r.out;
    };
    step("fleetgen --config config.json --out fleet.csv");
    const std::string train = step("train --config config.json --data fleet.csv --schema fleet.schema.json");
    const std::string model = "runs/" + train.substr(10, 12) + "/model.json";
    step("generate --config config.json --model " + model + " --out synthetic.csv");
    const std::string bench = step("benchmark --config config.json --data fleet.csv --model " + model);
    step("impute --config config.json --model " + model + " --data runs/" + bench.substr(14, 12) +
         "/amputated.csv --out imputed.csv");
    step("validate --config config.json --data fleet.csv --model " + model);
    trees[k] = tree_bytes(dir);
  }
  const bool same = all_ok && transcript[0] == transcript[1] && trees[0] == trees[1];
  return {same, std::to_string(trees[0].size()) + " artifacts across 6 commands, " +
                    (all_ok ? "all exit 0" : "a command failed") + ", " +
                    (trees[0] == trees[1] ? "byte-identical" : "bytes differ") + ", " +
                    (transcript[0] == transcript[1] ? "summaries identical" : "summaries differ")};
}

// 10 ------------------------------------------------------------------------
Outcome metric_oracles() {
  const double ks = ks_statistic({1.0, 2.0}, {2.0, 3.0});
  const std::vector<double> truth{3.0, 7.0, 11.0, 20.0};
  const Scores self = score(truth, truth);

  TabularDataset reference(Schema{{ColumnSpec::continuous("x", Transform::kNone)}}, 4);
  for (std::size_t r = 0; r < 4; ++r) reference.set(r, 0, truth[r]);
  TabularDataset target(reference.schema(), 3);
  const auto filled = baseline_impute(target, BaselineMethod::kMean, 0, reference);
  const std::vector<double> masked{5.0, 10.25, 15.5};  // mean 10.25, the reference mean
  const Scores mean = score(masked, {filled.completed.value(0, 0), filled.completed.value(1, 0),
                                     filled.completed.value(2, 0)});
  const bool ok = std::abs(ks - 0.5) <= 1e-12 && std::abs(self.mae) <= 1e-12 && std::abs(self.rmse) <= 1e-12 &&
                  std::abs(self.r2 - 1.0) <= 1e-12 && std::abs(mean.r2) <= 1e-12;
  return {ok, "ks " + fmt(ks, 12) + ", score(truth,truth) (" + fmt(self.mae, 1) + "," + fmt(self.rmse, 1) + "," +
                  fmt(self.r2, 1) + "), mean-imputer R2 " + fmt(mean.r2, 12)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string cli;
  std::string workdir = (fs::temp_directory_path() / "cablevae_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli, "path to the cablevae executable");
  app.add_option("--workdir", workdir, "scratch directory for CLI runs");
  app.add_option("--only", only, "criteria to run");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"loss-formula oracle", loss_oracles},
      {"training trend", training_trend},
      {"synthetic-data fidelity", synthetic_fidelity},
      {"benchmark ordering", benchmark_ordering},
      {"near-parity", near_parity},
      {"deterministic-dependency oracle", deterministic_dependency},
      {"semi-supervised gain", semi_supervised_gain},
      {"reproducibility", [&] { return cli_reproducibility(cli, workdir); }},
      {"metric oracles", metric_oracles},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << "criterion " << number << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << " (" << fmt(secs, 1) << " s)" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
