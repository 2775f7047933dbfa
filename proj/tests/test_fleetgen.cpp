#include <doctest.h>

#include <cmath>

#include "cablevae/error.hpp"
#include "cablevae/evaluation.hpp"
#include "cablevae/fleetgen.hpp"

using namespace cablevae;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

TEST_SUITE("fleetgen") {
  TEST_CASE("default fleet matches the calibration moments") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      FleetConfig c;
      c.seed = seed;
      const TabularDataset ds = generate_fleet(c);
      CHECK(ds.rows() == 10000);
      CHECK(std::abs(mean_of(column_values(ds, 1)) - 33.1) <= 3.0);
      CHECK(std::abs(mean_of(column_values(ds, 0)) - 159.0) <= 20.0);
    }
  }

  TEST_CASE("schema has the eight register columns") {
    const Schema s = fleet_schema();
    const std::vector<std::string> names{"Length", "Age", "OperationVoltage", "DSO", "Insulation",
                                         "ConductorMaterial", "ConductorSize", "NumberOfConductors"};
    REQUIRE(s.size() == names.size());
    for (std::size_t c = 0; c < names.size(); ++c) CHECK(s[c].name == names[c]);
    CHECK_FALSE(s[0].is_categorical());
    CHECK_FALSE(s[1].is_categorical());
    for (std::size_t c = 2; c < names.size(); ++c) CHECK(s[c].is_categorical());
  }

  TEST_CASE("fixed seed gives a bit-identical, fully observed fleet") {
    FleetConfig c;
    c.n = 500;
    c.seed = 4;
    const TabularDataset a = generate_fleet(c);
    CHECK(a == generate_fleet(c));
    CHECK(a.missing_count() == 0);
    CHECK_NOTHROW(a.validate());
    c.seed = 5;
    CHECK_FALSE(a == generate_fleet(c));
  }

  TEST_CASE("all-PILC fleets are older than all-XLPE fleets") {
    FleetConfig c;
    c.n = 2000;
    c.seed = 6;
    c.pilc_share = 1.0;
    const double pilc = mean_of(column_values(generate_fleet(c), 1));
    c.pilc_share = 0.0;
    const double xlpe = mean_of(column_values(generate_fleet(c), 1));
    CHECK(pilc > xlpe);
  }

  TEST_CASE("PILC rows are older than XLPE rows over 10 seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      FleetConfig c;
      c.n = 3000;
      c.seed = seed;
      const TabularDataset ds = generate_fleet(c);
      double sum[2] = {0, 0}, count[2] = {0, 0};
      for (std::size_t r = 0; r < ds.rows(); ++r) {
        sum[ds.category(r, 4)] += ds.value(r, 1);
        count[ds.category(r, 4)] += 1;
      }
      CHECK(sum[0] / count[0] > sum[1] / count[1]);
    }
  }

  TEST_CASE("deterministic-dependency switch") {
    FleetConfig c;
    c.n = 300;
    c.length_equals_age = true;
    const TabularDataset ds = generate_fleet(c);
    for (std::size_t r = 0; r < ds.rows(); ++r) CHECK(std::log1p(ds.value(r, 0)) == std::log1p(ds.value(r, 1)));
  }

  TEST_CASE("values respect units and rounding") {
    FleetConfig c;
    c.n = 1000;
    const TabularDataset ds = generate_fleet(c);
    for (std::size_t r = 0; r < ds.rows(); ++r) {
      CHECK(ds.value(r, 1) >= 1.0);
      CHECK(ds.value(r, 1) == std::round(ds.value(r, 1)));
      CHECK(ds.value(r, 0) >= 1.0);
      CHECK(std::abs(ds.value(r, 0) * 10.0 - std::round(ds.value(r, 0) * 10.0)) < 1e-6);
    }
  }

  TEST_CASE("invalid configs are rejected") {
    FleetConfig c;
    c.dso_shares = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.pilc_age.log_std = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.voltage_given_dso.erase("A");
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.n = 0;
    CHECK_THROWS_AS(generate_fleet(c), ConfigError);
    CHECK_THROWS_AS(fleet_config_from_json({{"pilc_shar", 0.3}}), ConfigError);
    CHECK_THROWS_AS(fleet_config_from_json({{"pilc_share", "most"}}), ConfigError);
  }

  TEST_CASE("config JSON round-trip") {
    FleetConfig c;
    c.n = 77;
    c.pilc_share = 0.25;
    c.aluminium_given_insulation["XLPE"] = {0.5};
    const FleetConfig back = fleet_config_from_json(fleet_config_to_json(c));
    CHECK(back.n == 77);
    CHECK(back.pilc_share == 0.25);
    CHECK(back.aluminium_given_insulation.at("XLPE")[0] == 0.5);
    CHECK(fleet_config_to_json(back) == fleet_config_to_json(c));
  }
}
