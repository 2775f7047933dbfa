#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cablevae/error.hpp"
#include "cablevae/fleetgen.hpp"
#include "cablevae/model.hpp"
#include "helpers.hpp"

using namespace cablevae;
using namespace testing;

namespace {

VaeModel small_model(std::uint64_t seed, ModelConfig cfg = {.hidden_dim = 16, .latent_dim = 4}) {
  return VaeModel::create(fit_preprocessor(small_dataset(40, seed)), cfg, seed);
}

autodiff::Bindings training_inputs(const VaeModel& model, const TabularDataset& raw, std::uint64_t seed) {
  const TabularDataset std_ds = transform(raw, model.preprocessor());
  autodiff::Bindings in = encoder_bindings(model, std_ds, iota_rows(raw.rows()));
  Rng rng(seed);
  in["noise"] = normal_tensor(rng, raw.rows(), model.config().latent_dim);
  return in;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("default embedding width") {
    CHECK(default_embedding_dim(1) == 1);
    CHECK(default_embedding_dim(2) == 2);
    CHECK(default_embedding_dim(4) == 2);
    CHECK(default_embedding_dim(5) == 3);
    CHECK(default_embedding_dim(64) == 8);
    CHECK(default_embedding_dim(1000) == 8);
  }

  TEST_CASE("parameter counts follow the layer arithmetic") {
    const Schema schema = fleet_schema();
    const VaeModel model = VaeModel::create(fit_preprocessor(generate_fleet({.n = 200})), {}, 1);
    // Independent count: categories 4,4,2,2,6,2 with widths 2,2,2,2,3,2.
    const std::size_t emb = 4 * 2 + 4 * 2 + 2 * 2 + 2 * 2 + 6 * 3 + 2 * 2;
    const std::size_t enc_in = 2 + (2 + 2 + 2 + 2 + 3 + 2);
    const std::size_t h = 145, l = 13, out = 2 + (4 + 4 + 2 + 2 + 6 + 2);
    const ParameterCounts counts = model.parameter_counts();
    CHECK(counts.embedding == emb);
    CHECK(counts.encoder == enc_in * h + h + 2 * (h * l + l));
    CHECK(counts.decoder == l * h + h + h * out + out);
    CHECK(counts.regression == 0);
    CHECK(model.schema() == schema);
  }

  TEST_CASE("glorot initialization bounds and zero biases") {
    const VaeModel model = small_model(3);
    for (const auto& [name, t] : model.parameters()) {
      if (name.ends_with(".bias")) {
        for (double v : t.values()) CHECK(v == 0.0);
        continue;
      }
      const double bound = std::sqrt(6.0 / double(t.shape()[0] + t.shape()[1]));
      for (double v : t.values()) CHECK(std::abs(v) <= bound);
    }
    CHECK(small_model(3).parameters() == model.parameters());
    CHECK_FALSE(small_model(4).parameters() == model.parameters());
  }

  TEST_CASE("full loss gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const VaeModel model = small_model(seed);
      const auto graph = build_training_graph(model, {0.3, 0.2});
      const auto inputs = training_inputs(model, small_dataset(6, 100 + seed), seed);
      const auto report = autodiff::check_gradients(graph, model.parameters(), inputs, graph.output("loss"));
      CHECK_MESSAGE(report.passed, "seed " << seed);
    }
  }

  TEST_CASE("embedding rows used in a batch get gradient, unused rows none") {
    const VaeModel model = small_model(5);
    TabularDataset batch = small_dataset(4, 77);
    for (std::size_t r = 0; r < 4; ++r) batch.set(r, 4, r % 2 == 0 ? 0.0 : 2.0);
    const auto graph = build_training_graph(model, {});
    const auto inputs = training_inputs(model, batch, 1);
    const auto grad = autodiff::gradients(graph, model.parameters(), inputs, graph.output("loss"));
    const Tensor& g = grad.gradients.at("emb.r");
    for (std::size_t row = 0; row < 4; ++row) {
      double norm = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) norm += std::abs(g.at(row, j));
      if (row == 0 || row == 2) CHECK(norm > 0.0);
      else CHECK(norm == 0.0);
    }
  }

  TEST_CASE("encode, decode and sample_prior are pure") {
    const VaeModel model = small_model(6);
    const TabularDataset std_ds = transform(small_dataset(10, 8), model.preprocessor());
    const Encoded a = encode(model, std_ds, iota_rows(10));
    const Encoded b = encode(model, std_ds, iota_rows(10));
    CHECK(a.mu == b.mu);
    CHECK(a.logvar == b.logvar);
    const Reconstruction ra = decode(model, a.mu, {});
    const Reconstruction rb = decode(model, a.mu, {});
    CHECK(ra.continuous_means == rb.continuous_means);
    CHECK(ra.logits == rb.logits);
    CHECK(sample_prior(model, 50, {}, 9) == sample_prior(model, 50, {}, 9));
    CHECK_FALSE(sample_prior(model, 50, {}, 9) == sample_prior(model, 50, {}, 10));
  }

  TEST_CASE("reparameterization averages to mu") {
    Rng rng(12);
    const std::size_t n = 10000;
    Tensor mu({n, 2}), logvar({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      mu.at(i, 0) = 1.5;
      mu.at(i, 1) = -0.7;
    }
    const Tensor z = reparameterize(mu, logvar, normal_tensor(rng, n, 2));
    double m0 = 0.0, m1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m0 += z.at(i, 0);
      m1 += z.at(i, 1);
    }
    CHECK(std::abs(m0 / n - 1.5) < 0.05);
    CHECK(std::abs(m1 / n + 0.7) < 0.05);
  }

  TEST_CASE("save and load reproduce encode outputs bit for bit") {
    const VaeModel model = small_model(7);
    const auto path = std::filesystem::temp_directory_path() / "cablevae_model_roundtrip.json";
    save_model(model, path.string());
    const VaeModel back = load_model(path.string());
    const TabularDataset std_ds = transform(small_dataset(12, 3), model.preprocessor());
    CHECK(encode(back, std_ds, iota_rows(12)).mu == encode(model, std_ds, iota_rows(12)).mu);
    CHECK(back.parameters() == model.parameters());
    CHECK(back.preprocessor() == model.preprocessor());

    SUBCASE("corrupted file") {
      std::ofstream(path) << "{\"format\": \"cablevae-model\", \"format_version\": ";
      CHECK_THROWS_AS(load_model(path.string()), ConfigError);
    }
    SUBCASE("version mismatch") {
      nlohmann::json doc = model_to_json(model);
      doc["format_version"] = kModelFormatVersion + 1;
      std::ofstream(path) << doc.dump();
      CHECK_THROWS_AS(load_model(path.string()), ConfigError);
    }
    std::filesystem::remove(path);
  }

  TEST_CASE("conditioning") {
    ModelConfig cfg{.hidden_dim = 8, .latent_dim = 3};
    cfg.condition_columns = {"p"};
    const VaeModel model = VaeModel::create(fit_preprocessor(small_dataset(30, 1)), cfg, 1);
    CHECK(model.layout().conditions.size() == 1);
    CHECK(model.layout().categorical.size() == 2);

    SUBCASE("missing condition value is rejected") {
      TabularDataset ds = transform(small_dataset(3, 2), model.preprocessor());
      ds.set_missing(1, 2);
      CHECK_THROWS_AS(encoder_bindings(model, ds, {0, 1, 2}), DataError);
    }
    SUBCASE("sample_prior fixes the condition") {
      const TabularDataset s = sample_prior(model, 20, {{"p", 1}}, 4);
      for (std::size_t r = 0; r < 20; ++r) CHECK(s.category(r, 2) == 1);
    }
    SUBCASE("decode requires condition values") {
      CHECK_THROWS_AS(decode(model, Tensor({2, 3}), {}), DataError);
    }
  }

  TEST_CASE("config validation") {
    const Schema schema = small_schema();
    ModelConfig cfg;
    cfg.condition_columns = {"a"};
    CHECK_THROWS_AS(cfg.validate(schema), ConfigError);
    cfg = {};
    cfg.target_column = "p";
    CHECK_THROWS_AS(cfg.validate(schema), ConfigError);
    cfg = {};
    cfg.latent_dim = 0;
    CHECK_THROWS_AS(cfg.validate(schema), ConfigError);
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"hidden", 3}}), ConfigError);
    CHECK_THROWS_AS(model_config_from_json(nlohmann::json{{"hidden_dim", "big"}}), ConfigError);
    const ModelConfig round = model_config_from_json(model_config_to_json(ModelConfig{.hidden_dim = 9}));
    CHECK(round.hidden_dim == 9);
  }
}
