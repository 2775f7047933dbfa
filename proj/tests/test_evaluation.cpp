#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cablevae/error.hpp"
#include "cablevae/evaluation.hpp"
#include "cablevae/fleetgen.hpp"
#include "helpers.hpp"

using namespace cablevae;
using namespace testing;

namespace {

// Independent oracle: evaluate both ECDFs at every pooled sample point.
double brute_force_ks(const std::vector<double>& a, const std::vector<double>& b) {
  auto cdf = [](const std::vector<double>& s, double t) {
    return double(std::count_if(s.begin(), s.end(), [t](double v) { return v <= t; })) / double(s.size());
  };
  double best = 0.0;
  for (const auto* s : {&a, &b}) {
    for (double t : *s) best = std::max(best, std::abs(cdf(a, t) - cdf(b, t)));
  }
  return best;
}

TabularDataset fleet(std::size_t n, std::uint64_t seed) {
  FleetConfig c;
  c.n = n;
  c.seed = seed;
  return generate_fleet(c);
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("ks examples") {
    CHECK(ks_statistic({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK(ks_statistic({0, 1}, {10, 11}) == 1.0);
    CHECK(std::abs(ks_statistic({1, 2}, {2, 3}) - 0.5) < 1e-12);
    CHECK_THROWS_AS(ks_statistic({}, {1.0}), DataError);
  }

  TEST_CASE("ks is symmetric, bounded and matches brute force") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> a(1 + rng.index(20)), b(1 + rng.index(20));
      for (double& v : a) v = double(rng.index(8));
      for (double& v : b) v = double(rng.index(8)) + 0.5 * double(rng.index(2));
      const double ab = ks_statistic(a, b);
      CHECK(ab == ks_statistic(b, a));
      CHECK(ab >= 0.0);
      CHECK(ab <= 1.0);
      CHECK(std::abs(ab - brute_force_ks(a, b)) < 1e-12);
    }
  }

  TEST_CASE("ecdf examples and validity") {
    using P = std::vector<std::pair<double, double>>;
    CHECK(ecdf({5.0}) == P{{5.0, 1.0}});
    const P dup = ecdf({1.0, 3.0, 1.0});
    REQUIRE(dup.size() == 2);
    CHECK(dup[0].first == 1.0);
    CHECK(dup[0].second == doctest::Approx(2.0 / 3.0));
    CHECK(dup[1] == std::pair<double, double>{3.0, 1.0});
    Rng rng(2);
    std::vector<double> s(100);
    for (double& v : s) v = rng.normal();
    const P curve = ecdf(s);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      CHECK(curve[i].first > curve[i - 1].first);
      CHECK(curve[i].second > curve[i - 1].second);
    }
    CHECK(curve.back().second == 1.0);
  }

  TEST_CASE("score examples") {
    const Scores same = score({1.0, 2.0, 4.0}, {1.0, 2.0, 4.0});
    CHECK(same.mae == 0.0);
    CHECK(same.rmse == 0.0);
    CHECK(same.r2 == 1.0);
    const Scores half = score({0.0, 2.0}, {1.0, 1.0});
    CHECK(std::abs(half.mae - 1.0) < 1e-12);
    CHECK(std::abs(half.rmse - 1.0) < 1e-12);
    CHECK(std::abs(half.r2) < 1e-12);
    const Scores mean = score({1.0, 5.0, 6.0}, {4.0, 4.0, 4.0});
    CHECK(std::abs(mean.r2) < 1e-12);
    CHECK_THROWS_AS(score({1.0}, {1.0}), DataError);
    CHECK_THROWS_AS(score({2.0, 2.0}, {1.0, 3.0}), DataError);
    CHECK_THROWS_AS(score({1.0, 2.0}, {1.0}), ShapeError);
  }

  TEST_CASE("ampute masks the exact count") {
    const TabularDataset ds = fleet(1000, 3);
    for (auto mech : {Mechanism::kMcar, Mechanism::kMar, Mechanism::kMnar}) {
      AmputationSpec spec{.columns = {"Age"}, .fraction = 0.3, .mechanism = mech, .seed = 4};
      if (mech == Mechanism::kMar) spec.driver = "Length";
      const Amputation a = ampute(ds, spec);
      CHECK(a.truth.size() == 300);
      CHECK(a.amputated.missing_count() == 300);
      CHECK(a.amputated.observed_count(1) + a.truth.size() == ds.observed_count(1));
      for (const auto& cell : a.truth) {
        CHECK_FALSE(a.amputated.observed(cell.row, cell.column));
        CHECK(cell.value == ds.value(cell.row, cell.column));
      }
      for (std::size_t r = 0; r < ds.rows(); ++r) {
        for (std::size_t c = 0; c < ds.cols(); ++c) {
          if (a.amputated.observed(r, c)) CHECK(a.amputated.value(r, c) == ds.value(r, c));
        }
      }
      const Amputation again = ampute(ds, spec);
      CHECK(again.amputated == a.amputated);
    }
  }

  TEST_CASE("ampute counts only observed cells") {
    TabularDataset ds = fleet(100, 5);
    for (std::size_t r = 0; r < 20; ++r) ds.set_missing(r, 1);
    const Amputation a = ampute(ds, {.columns = {"Age"}, .fraction = 0.5, .mechanism = Mechanism::kMcar, .seed = 1});
    CHECK(a.truth.size() == 40);
    for (const auto& cell : a.truth) CHECK(cell.row >= 20);
  }

  TEST_CASE("MNAR masks older cables more often") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const TabularDataset ds = fleet(2000, seed);
      const Amputation a = ampute(ds, {.columns = {"Age"}, .fraction = 0.3, .mechanism = Mechanism::kMnar, .seed = seed});
      double masked = 0.0, kept = 0.0;
      for (const auto& cell : a.truth) masked += cell.value;
      masked /= double(a.truth.size());
      for (double v : column_values(a.amputated, 1)) kept += v;
      kept /= double(a.amputated.observed_count(1));
      CHECK(masked > kept);
    }
  }

  TEST_CASE("MAR follows the driver") {
    const TabularDataset ds = fleet(2000, 6);
    const Amputation a =
        ampute(ds, {.columns = {"Age"}, .fraction = 0.3, .mechanism = Mechanism::kMar, .driver = "Length", .seed = 2});
    double masked = 0.0, all = 0.0;
    for (const auto& cell : a.truth) masked += ds.value(cell.row, 0);
    for (std::size_t r = 0; r < ds.rows(); ++r) all += ds.value(r, 0);
    CHECK(masked / double(a.truth.size()) > all / double(ds.rows()));
  }

  TEST_CASE("amputation spec validation") {
    const Schema schema = fleet_schema();
    CHECK_THROWS_AS(AmputationSpec({.fraction = 0.0}).validate(schema), ConfigError);
    CHECK_THROWS_AS(AmputationSpec({.fraction = 1.0}).validate(schema), ConfigError);
    CHECK_THROWS_AS(AmputationSpec({.columns = {"Nope"}}).validate(schema), ConfigError);
    CHECK_THROWS_AS(AmputationSpec({.mechanism = Mechanism::kMar}).validate(schema), ConfigError);
    CHECK_THROWS_AS(AmputationSpec({.mechanism = Mechanism::kMar, .driver = "Age"}).validate(schema), ConfigError);
    CHECK_THROWS_AS(ampute(fleet(3, 1), {.fraction = 0.1}), DataError);
    const AmputationSpec spec{.columns = {"Length"}, .fraction = 0.2, .mechanism = Mechanism::kMar, .driver = "DSO", .seed = 9};
    const AmputationSpec back = amputation_spec_from_json(amputation_spec_to_json(spec));
    CHECK(back.columns == spec.columns);
    CHECK(back.driver == spec.driver);
    CHECK(back.mechanism == spec.mechanism);
    CHECK(back.seed == 9);
  }

  TEST_CASE("compare_real_synthetic") {
    const TabularDataset real = fleet(500, 7);
    SUBCASE("copy gives zero distances") {
      for (const auto& row : compare_real_synthetic(real, real)) {
        CHECK(row.distance == 0.0);
        CHECK(row.real_mean == row.synthetic_mean);
      }
    }
    SUBCASE("degenerate synthetic data is far away") {
      TabularDataset zeros(real.schema(), 500);
      for (std::size_t r = 0; r < 500; ++r) {
        for (std::size_t c = 0; c < zeros.cols(); ++c) zeros.set(r, c, 0.0);
      }
      for (const auto& row : compare_real_synthetic(real, zeros)) {
        if (row.scale != "categories") CHECK(row.distance > 0.95);
      }
    }
    SUBCASE("rows per feature and sample std") {
      const auto rows = compare_real_synthetic(real, fleet(500, 8));
      CHECK(rows.size() == 2 * 2 + 6);
      const auto age = std::find_if(rows.begin(), rows.end(),
                                    [](const auto& r) { return r.feature == "Age" && r.scale == "raw"; });
      REQUIRE(age != rows.end());
      const auto v = column_values(real, 1);
      double m = 0.0, ss = 0.0;
      for (double x : v) m += x;
      m /= double(v.size());
      for (double x : v) ss += (x - m) * (x - m);
      CHECK(age->real_std == doctest::Approx(std::sqrt(ss / double(v.size() - 1))).epsilon(1e-12));
    }
    CHECK_THROWS_AS(compare_real_synthetic(real, small_dataset(5, 1)), DataError);
  }

  TEST_CASE("report CSVs") {
    std::ostringstream table;
    write_comparison_csv(table, {{"Age", "log", 1.0, 0.5, 1.25, 0.5, 0.125}});
    CHECK(table.str() ==
          "feature,scale,real_mean,real_std,synthetic_mean,synthetic_std,metric,distance\n"
          "Age,log,1,0.5,1.25,0.5,ks,0.125\n");
    std::ostringstream curve;
    write_ecdf_csv(curve, {{1.0, 0.5}, {2.0, 1.0}});
    CHECK(curve.str() == "value,fraction\n1,0.5\n2,1\n");
  }

  TEST_CASE("benchmark report merges external rows verbatim") {
    BenchmarkReport report;
    std::istringstream ext("imputer,column,scale,mae,rmse,r2\nmissforest,Age,raw,7.1,9.5,0.8\n");
    report.merge_external(ext);
    const BenchmarkRow* row = report.find("missforest", "Age");
    REQUIRE(row != nullptr);
    CHECK(row->external);
    CHECK(row->mae == 7.1);
    std::ostringstream out;
    write_report_csv(out, report);
    CHECK(out.str() == "imputer,column,scale,mae,rmse,r2\nmissforest,Age,raw,7.1,9.5,0.8\n");
  }

  TEST_CASE("benchmark without a model records a failed VAE row and runs the rest") {
    const TabularDataset data = fleet(400, 9);
    auto [reference, eval] = split(data, 0.8, 1);
    BenchmarkConfig cfg;
    cfg.amputation = {.columns = {"Age"}, .fraction = 0.4, .mechanism = Mechanism::kMnar, .seed = 3};
    cfg.imputers = {"vae", "mean", "median", "knn"};
    const BenchmarkRun run = build_benchmark(eval, reference, cfg, nullptr);
    REQUIRE(run.report.find("vae", "Age") != nullptr);
    CHECK(run.report.find("vae", "Age")->error.has_value());
    for (const char* name : {"mean", "median", "knn"}) {
      const BenchmarkRow* raw = run.report.find(name, "Age");
      REQUIRE(raw != nullptr);
      CHECK_FALSE(raw->error.has_value());
      CHECK(run.report.find(name, "Age", "log") != nullptr);
    }
    CHECK(run.report.metadata.contains("masked_cells"));
    CHECK(run.results.size() == 3);
    std::ostringstream out;
    write_report_csv(out, run.report);
    CHECK(out.str().find("vae,Age,raw,,,\n") != std::string::npos);
  }

  TEST_CASE("benchmark rejects categorical targets") {
    const TabularDataset data = fleet(100, 10);
    BenchmarkConfig cfg;
    cfg.amputation = {.columns = {"DSO"}, .fraction = 0.3, .mechanism = Mechanism::kMcar};
    cfg.imputers = {"mean"};
    CHECK_THROWS_AS(build_benchmark(data, {}, cfg, nullptr), ConfigError);
  }
}
