#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cablevae/autodiff.hpp"
#include "cablevae/objective.hpp"
#include "cablevae/tabular.hpp"

namespace cablevae {

enum class Activation { kRelu, kTanh };

struct ModelConfig {
  std::size_t hidden_dim = 145;
  std::size_t latent_dim = 13;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  Activation activation = Activation::kRelu;
  /// Per-column overrides of the default embedding width.
  std::map<std::string, std::size_t> embedding_dims;
  /// Observed categorical columns the encoder and decoder are conditioned on.
  /// They are not reconstructed.
  std::vector<std::string> condition_columns;
  /// Continuous column predicted by a regression head from the latent mean
  /// (semi-supervised mode). It is neither encoded nor reconstructed.
  std::optional<std::string> target_column;

  /// Throws ConfigError when inconsistent with `schema`.
  void validate(const Schema& schema) const;
};

/// ceil(sqrt(categories)), capped at 8.
std::size_t default_embedding_dim(std::size_t categories);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Column roles derived from a schema and a ModelConfig.
struct ModelLayout {
  std::vector<std::size_t> continuous;   // reconstructed continuous columns
  std::vector<std::size_t> categorical;  // reconstructed categorical columns
  std::vector<std::size_t> conditions;
  std::optional<std::size_t> target;
  std::vector<std::size_t> embedding_dims;  // per schema column, 0 if none
  std::size_t encoder_input_width = 0;
  std::size_t decoder_input_width = 0;

  /// Columns the encoder reads: continuous, categorical and conditions.
  std::vector<std::size_t> encoder_columns() const;
};

ModelLayout make_layout(const Schema& schema, const ModelConfig& config);

struct ParameterCounts {
  std::size_t encoder = 0;
  std::size_t decoder = 0;
  std::size_t embedding = 0;
  std::size_t regression = 0;
};

class VaeModel {
 public:
  /// Fresh model: weights uniform in +-sqrt(6 / (fan_in + fan_out)), zero
  /// biases, drawn from one seeded stream in a fixed order with the
  /// regression head last.
  static VaeModel create(const Preprocessor& preprocessor, ModelConfig config, std::uint64_t seed);

  VaeModel(Preprocessor preprocessor, ModelConfig config, autodiff::ParameterSet params,
           bool trained);

  const ModelConfig& config() const { return config_; }
  const Schema& schema() const { return preprocessor_.schema(); }
  const Preprocessor& preprocessor() const { return preprocessor_; }
  const ModelLayout& layout() const { return layout_; }
  const autodiff::ParameterSet& parameters() const { return params_; }
  autodiff::ParameterSet& mutable_parameters() { return params_; }
  bool trained() const { return trained_; }
  void set_trained(bool trained) { trained_ = trained; }
  ParameterCounts parameter_counts() const;

  /// Shapes of every parameter this model owns.
  std::map<std::string, std::vector<std::size_t>> parameter_shapes() const;

 private:
  Preprocessor preprocessor_;
  ModelConfig config_;
  ModelLayout layout_;
  autodiff::ParameterSet params_;
  bool trained_ = false;
};

// Graph construction. Input names: "cont" [B x d_cont] standardized continuous
// values, "cat:<column>" [B] category indices for every encoded categorical
// column, "noise" [B x latent], "z" [B x latent], "target" [B x 1] and
// "target_weight" [B x 1].

struct EncoderNodes {
  autodiff::NodeId mu;
  autodiff::NodeId logvar;
};

struct DecoderNodes {
  std::optional<autodiff::NodeId> continuous;
  std::vector<autodiff::NodeId> logits;  // one per layout().categorical entry
};

EncoderNodes add_encoder(autodiff::Graph& graph, const VaeModel& model);
DecoderNodes add_decoder(autodiff::Graph& graph, const VaeModel& model, autodiff::NodeId z);
/// z = mu + exp(0.5 * logvar) * noise, with noise an input.
autodiff::NodeId add_reparameterize(autodiff::Graph& graph, autodiff::NodeId mu,
                                    autodiff::NodeId logvar, autodiff::NodeId noise);
autodiff::NodeId add_regression_head(autodiff::Graph& graph, const VaeModel& model,
                                     autodiff::NodeId mu);

/// Outputs "mu" and "logvar".
autodiff::Graph build_encoder_graph(const VaeModel& model);
/// Input "z"; outputs "cont" and "logits:<column>".
autodiff::Graph build_decoder_graph(const VaeModel& model);
/// Outputs "loss", "cont", "cat", "kl" and, with a regression head, "sup"
/// (weighted squared error) and "mu".
autodiff::Graph build_training_graph(const VaeModel& model, const objective::LossWeights& weights,
                                     double supervised_weight = 0.0);

/// Encoder inputs for `rows` of a standardized dataset. Every encoded cell
/// must be observed.
autodiff::Bindings encoder_bindings(const VaeModel& model, const TabularDataset& standardized,
                                    const std::vector<std::size_t>& rows);

struct Encoded {
  Tensor mu;
  Tensor logvar;
};

struct Reconstruction {
  Tensor continuous_means;      // [B x d_cont]
  std::vector<Tensor> logits;   // per reconstructed categorical, [B x C_k]
};

/// Category indices per condition column, one entry per row.
using ConditionValues = std::map<std::string, std::vector<std::size_t>>;

Encoded encode(const VaeModel& model, const TabularDataset& standardized,
               const std::vector<std::size_t>& rows);
Encoded encode(const VaeModel& model, const autodiff::Bindings& inputs);

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& noise);

Reconstruction decode(const VaeModel& model, const Tensor& z, const ConditionValues& conditions);

/// Regression-head prediction (standardized target scale) from latent means.
Tensor predict_target(const VaeModel& model, const Tensor& mu);

/// n rows decoded from z ~ N(0, I): continuous cells are decoder means,
/// categorical cells are drawn from softmax(logits). `conditions` fixes each
/// condition column to one category index. Returns a standardized dataset.
TabularDataset sample_prior(const VaeModel& model, std::size_t n,
                            const std::map<std::string, std::size_t>& conditions,
                            std::uint64_t seed);

/// Model file: format tag/version, config, preprocessor (with schema),
/// trained flag and parameters.
inline constexpr int kModelFormatVersion = 1;
nlohmann::json model_to_json(const VaeModel& model);
VaeModel model_from_json(const nlohmann::json& doc);
void save_model(const VaeModel& model, const std::string& path);
VaeModel load_model(const std::string& path);

}  // namespace cablevae
