#include "cablevae/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "cablevae/error.hpp"
#include "cablevae/rng.hpp"

namespace cablevae {

using autodiff::Bindings;
using autodiff::Graph;
using autodiff::NodeId;
using autodiff::ParameterSet;

// ---------------------------------------------------------------------------
// Configuration

std::size_t default_embedding_dim(std::size_t categories) {
  const auto dim = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(categories))));
  return std::clamp<std::size_t>(dim, 1, 8);
}

void ModelConfig::validate(const Schema& schema) const {
  if (latent_dim < 1) throw ConfigError("model.latent_dim must be >= 1");
  if (hidden_dim < latent_dim) throw ConfigError("model.hidden_dim must be >= model.latent_dim");
  std::set<std::string> seen;
  for (const auto& name : condition_columns) {
    auto c = schema.find(name);
    if (!c) throw ConfigError("model.condition_columns: unknown column '" + name + "'");
    if (!schema[*c].is_categorical()) {
      throw ConfigError("model.condition_columns: '" + name + "' is not categorical");
    }
    if (!seen.insert(name).second) {
      throw ConfigError("model.condition_columns: '" + name + "' listed twice");
    }
  }
  if (target_column) {
    auto c = schema.find(*target_column);
    if (!c) throw ConfigError("model.target_column: unknown column '" + *target_column + "'");
    if (schema[*c].is_categorical()) {
      throw ConfigError("model.target_column: '" + *target_column + "' must be continuous");
    }
  }
  for (const auto& [name, dim] : embedding_dims) {
    auto c = schema.find(name);
    if (!c || !schema[*c].is_categorical()) {
      throw ConfigError("model.embedding_dims: '" + name + "' is not a categorical column");
    }
    if (dim < 1) throw ConfigError("model.embedding_dims: '" + name + "' must be >= 1");
  }
}

namespace {

const char* activation_name(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

void reject_unknown_keys(const nlohmann::json& doc, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : doc.items()) {
    if (!allowed.count(key)) throw ConfigError(where + "." + key + ": unknown field");
  }
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& config) {
  nlohmann::json doc = {{"hidden_dim", config.hidden_dim},
                        {"latent_dim", config.latent_dim},
                        {"encoder_layers", config.encoder_layers},
                        {"decoder_layers", config.decoder_layers},
                        {"activation", activation_name(config.activation)},
                        {"embedding_dims", config.embedding_dims},
                        {"condition_columns", config.condition_columns}};
  doc["target_column"] = config.target_column ? nlohmann::json(*config.target_column) : nlohmann::json();
  return doc;
}

ModelConfig model_config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("model: expected an object");
  reject_unknown_keys(doc,
                      {"hidden_dim", "latent_dim", "encoder_layers", "decoder_layers", "activation",
                       "embedding_dims", "condition_columns", "target_column"},
                      "model");
  ModelConfig config;
  std::string field;
  try {
    field = "hidden_dim";
    config.hidden_dim = doc.value(field, config.hidden_dim);
    field = "latent_dim";
    config.latent_dim = doc.value(field, config.latent_dim);
    field = "encoder_layers";
    config.encoder_layers = doc.value(field, config.encoder_layers);
    field = "decoder_layers";
    config.decoder_layers = doc.value(field, config.decoder_layers);
    field = "activation";
    const auto act = doc.value(field, std::string("relu"));
    if (act == "relu") config.activation = Activation::kRelu;
    else if (act == "tanh") config.activation = Activation::kTanh;
    else throw ConfigError("model.activation: expected relu or tanh, got '" + act + "'");
    field = "embedding_dims";
    config.embedding_dims = doc.value(field, config.embedding_dims);
    field = "condition_columns";
    config.condition_columns = doc.value(field, config.condition_columns);
    field = "target_column";
    if (doc.contains(field) && !doc[field].is_null()) config.target_column = doc[field].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model." + field + ": " + e.what());
  }
  return config;
}

std::vector<std::size_t> ModelLayout::encoder_columns() const {
  std::vector<std::size_t> cols = continuous;
  cols.insert(cols.end(), categorical.begin(), categorical.end());
  cols.insert(cols.end(), conditions.begin(), conditions.end());
  return cols;
}

ModelLayout make_layout(const Schema& schema, const ModelConfig& config) {
  config.validate(schema);
  ModelLayout layout;
  layout.embedding_dims.assign(schema.size(), 0);
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& spec = schema[c];
    const bool is_condition =
        std::find(config.condition_columns.begin(), config.condition_columns.end(), spec.name) !=
        config.condition_columns.end();
    if (spec.is_categorical()) {
      auto it = config.embedding_dims.find(spec.name);
      layout.embedding_dims[c] =
          it != config.embedding_dims.end() ? it->second : default_embedding_dim(spec.category_count());
      (is_condition ? layout.conditions : layout.categorical).push_back(c);
    } else if (config.target_column && *config.target_column == spec.name) {
      layout.target = c;
    } else {
      layout.continuous.push_back(c);
    }
  }
  if (layout.continuous.empty() && layout.categorical.empty()) {
    throw ConfigError("model has no columns to reconstruct");
  }
  layout.encoder_input_width = layout.continuous.size();
  for (std::size_t c : layout.categorical) layout.encoder_input_width += layout.embedding_dims[c];
  std::size_t cond_width = 0;
  for (std::size_t c : layout.conditions) cond_width += layout.embedding_dims[c];
  layout.encoder_input_width += cond_width;
  layout.decoder_input_width = config.latent_dim + cond_width;
  return layout;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

struct ParamDecl {
  std::string name;
  std::vector<std::size_t> shape;
  bool is_bias = false;
};

// Declaration order fixes the initialization stream order.
std::vector<ParamDecl> declare_parameters(const Schema& schema, const ModelConfig& config,
                                          const ModelLayout& layout) {
  std::vector<ParamDecl> decls;
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    decls.push_back({prefix + ".weight", {in, out}, false});
    decls.push_back({prefix + ".bias", {out}, true});
  };
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (layout.embedding_dims[c] == 0) continue;
    decls.push_back({"emb." + schema[c].name, {schema[c].category_count(), layout.embedding_dims[c]}, false});
  }
  std::size_t width = layout.encoder_input_width;
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    dense("enc.hidden" + std::to_string(l), width, config.hidden_dim);
    width = config.hidden_dim;
  }
  dense("enc.mu", width, config.latent_dim);
  dense("enc.logvar", width, config.latent_dim);
  width = layout.decoder_input_width;
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    dense("dec.hidden" + std::to_string(l), width, config.hidden_dim);
    width = config.hidden_dim;
  }
  if (!layout.continuous.empty()) dense("dec.cont", width, layout.continuous.size());
  for (std::size_t c : layout.categorical) {
    dense("dec.logits." + schema[c].name, width, schema[c].category_count());
  }
  if (layout.target) dense("reg", config.latent_dim, 1);
  return decls;
}

NodeId param(Graph& graph, const VaeModel& model, const std::string& name) {
  if (auto id = graph.find_parameter(name)) return *id;
  return graph.parameter(name, model.parameters().at(name).shape());
}

NodeId activate(Graph& graph, const VaeModel& model, NodeId x) {
  return model.config().activation == Activation::kRelu ? graph.relu(x) : graph.tanh(x);
}

NodeId dense(Graph& graph, const VaeModel& model, NodeId x, const std::string& prefix) {
  return graph.affine(x, param(graph, model, prefix + ".weight"), param(graph, model, prefix + ".bias"),
                      prefix);
}

NodeId embed(Graph& graph, const VaeModel& model, std::size_t column) {
  const std::string& name = model.schema()[column].name;
  return graph.embedding(graph.input("cat:" + name), param(graph, model, "emb." + name), "emb." + name);
}

}  // namespace

VaeModel VaeModel::create(const Preprocessor& preprocessor, ModelConfig config, std::uint64_t seed) {
  const ModelLayout layout = make_layout(preprocessor.schema(), config);
  Rng rng(seed);
  ParameterSet params;
  for (const auto& decl : declare_parameters(preprocessor.schema(), config, layout)) {
    Tensor t(decl.shape);
    if (!decl.is_bias) {
      const double bound = std::sqrt(6.0 / static_cast<double>(decl.shape[0] + decl.shape[1]));
      for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * bound;
    }
    params.emplace(decl.name, std::move(t));
  }
  return VaeModel(preprocessor, std::move(config), std::move(params), false);
}

VaeModel::VaeModel(Preprocessor preprocessor, ModelConfig config, ParameterSet params, bool trained)
    : preprocessor_(std::move(preprocessor)),
      config_(std::move(config)),
      layout_(make_layout(preprocessor_.schema(), config_)),
      params_(std::move(params)),
      trained_(trained) {
  const auto decls = declare_parameters(schema(), config_, layout_);
  if (decls.size() != params_.size()) {
    throw ConfigError("model has " + std::to_string(params_.size()) + " parameters, expected " +
                      std::to_string(decls.size()));
  }
  for (const auto& decl : decls) {
    auto it = params_.find(decl.name);
    if (it == params_.end()) throw ConfigError("model is missing parameter '" + decl.name + "'");
    if (it->second.shape() != decl.shape) {
      throw ConfigError("parameter '" + decl.name + "' has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(decl.shape));
    }
  }
}

std::map<std::string, std::vector<std::size_t>> VaeModel::parameter_shapes() const {
  std::map<std::string, std::vector<std::size_t>> shapes;
  for (const auto& [name, t] : params_) shapes.emplace(name, t.shape());
  return shapes;
}

ParameterCounts VaeModel::parameter_counts() const {
  ParameterCounts counts;
  for (const auto& [name, t] : params_) {
    if (name.rfind("enc.", 0) == 0) counts.encoder += t.size();
    else if (name.rfind("dec.", 0) == 0) counts.decoder += t.size();
    else if (name.rfind("emb.", 0) == 0) counts.embedding += t.size();
    else counts.regression += t.size();
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Graphs

EncoderNodes add_encoder(Graph& graph, const VaeModel& model) {
  const auto& layout = model.layout();
  std::vector<NodeId> parts;
  if (!layout.continuous.empty()) parts.push_back(graph.input("cont"));
  for (std::size_t c : layout.categorical) parts.push_back(embed(graph, model, c));
  for (std::size_t c : layout.conditions) parts.push_back(embed(graph, model, c));
  NodeId h = parts.size() == 1 ? parts.front() : graph.concat(parts, "enc.input");
  for (std::size_t l = 0; l < model.config().encoder_layers; ++l) {
    h = activate(graph, model, dense(graph, model, h, "enc.hidden" + std::to_string(l)));
  }
  return {dense(graph, model, h, "enc.mu"), dense(graph, model, h, "enc.logvar")};
}

DecoderNodes add_decoder(Graph& graph, const VaeModel& model, NodeId z) {
  const auto& layout = model.layout();
  std::vector<NodeId> parts{z};
  for (std::size_t c : layout.conditions) parts.push_back(embed(graph, model, c));
  NodeId h = parts.size() == 1 ? z : graph.concat(parts, "dec.input");
  for (std::size_t l = 0; l < model.config().decoder_layers; ++l) {
    h = activate(graph, model, dense(graph, model, h, "dec.hidden" + std::to_string(l)));
  }
  DecoderNodes out;
  if (!layout.continuous.empty()) out.continuous = dense(graph, model, h, "dec.cont");
  for (std::size_t c : layout.categorical) {
    out.logits.push_back(dense(graph, model, h, "dec.logits." + model.schema()[c].name));
  }
  return out;
}

NodeId add_reparameterize(Graph& graph, NodeId mu, NodeId logvar, NodeId noise) {
  NodeId sigma = graph.exp(graph.scale(logvar, 0.5), "sigma");
  return graph.add(mu, graph.mul(sigma, noise), "z");
}

NodeId add_regression_head(Graph& graph, const VaeModel& model, NodeId mu) {
  if (!model.layout().target) throw ConfigError("model has no regression target");
  return dense(graph, model, mu, "reg");
}

Graph build_encoder_graph(const VaeModel& model) {
  Graph graph;
  auto enc = add_encoder(graph, model);
  graph.set_output("mu", enc.mu);
  graph.set_output("logvar", enc.logvar);
  return graph;
}

Graph build_decoder_graph(const VaeModel& model) {
  Graph graph;
  auto dec = add_decoder(graph, model, graph.input("z"));
  if (dec.continuous) graph.set_output("cont", *dec.continuous);
  for (std::size_t k = 0; k < dec.logits.size(); ++k) {
    graph.set_output("logits:" + model.schema()[model.layout().categorical[k]].name, dec.logits[k]);
  }
  return graph;
}

Graph build_training_graph(const VaeModel& model, const objective::LossWeights& weights,
                           double supervised_weight) {
  Graph graph;
  const auto& layout = model.layout();
  auto enc = add_encoder(graph, model);
  NodeId z = add_reparameterize(graph, enc.mu, enc.logvar, graph.input("noise"));
  auto dec = add_decoder(graph, model, z);

  std::optional<NodeId> cont;
  if (dec.continuous) cont = objective::add_continuous_nll(graph, graph.input("cont"), *dec.continuous);
  std::optional<NodeId> cat;
  if (!dec.logits.empty()) {
    std::vector<std::pair<NodeId, NodeId>> heads;
    for (std::size_t k = 0; k < dec.logits.size(); ++k) {
      heads.emplace_back(dec.logits[k], graph.input("cat:" + model.schema()[layout.categorical[k]].name));
    }
    cat = objective::add_categorical_ce(graph, heads);
  }
  NodeId kl = objective::add_kl_divergence(graph, enc.mu, enc.logvar);
  NodeId total = objective::add_total(graph, weights, cont, cat, kl);

  if (cont) graph.set_output("cont", *cont);
  if (cat) graph.set_output("cat", *cat);
  graph.set_output("kl", kl);
  graph.set_output("vae", total);
  graph.set_output("mu", enc.mu);

  if (layout.target) {
    NodeId pred = add_regression_head(graph, model, enc.mu);
    NodeId err = graph.square(graph.sub(pred, graph.input("target")));
    NodeId sup = graph.sum(graph.mul(err, graph.input("target_weight")), "loss.sup");
    graph.set_output("sup", sup);
    total = graph.add(total, graph.scale(sup, supervised_weight), "loss");
  }
  graph.set_output("loss", total);
  return graph;
}

// ---------------------------------------------------------------------------
// Numeric entry points

Bindings encoder_bindings(const VaeModel& model, const TabularDataset& standardized,
                          const std::vector<std::size_t>& rows) {
  const auto& layout = model.layout();
  if (!(standardized.schema() == model.schema())) throw DataError("dataset schema does not match the model");
  Bindings inputs;
  const std::size_t n = rows.size();
  auto check = [&](std::size_t r, std::size_t c) {
    if (!standardized.observed(r, c)) {
      throw DataError("row " + std::to_string(r) + " column '" + model.schema()[c].name +
                      "' is missing but required by the encoder");
    }
  };
  if (!layout.continuous.empty()) {
    Tensor cont({n, layout.continuous.size()});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < layout.continuous.size(); ++j) {
        check(rows[i], layout.continuous[j]);
        cont.at(i, j) = standardized.value(rows[i], layout.continuous[j]);
      }
    }
    inputs.emplace("cont", std::move(cont));
  }
  for (std::size_t c : layout.encoder_columns()) {
    if (!model.schema()[c].is_categorical()) continue;
    Tensor idx({n});
    for (std::size_t i = 0; i < n; ++i) {
      check(rows[i], c);
      idx[i] = standardized.value(rows[i], c);
    }
    inputs.emplace("cat:" + model.schema()[c].name, std::move(idx));
  }
  return inputs;
}

Encoded encode(const VaeModel& model, const Bindings& inputs) {
  Graph graph = build_encoder_graph(model);
  auto out = autodiff::evaluate(graph, model.parameters(), inputs);
  return {std::move(out.at("mu")), std::move(out.at("logvar"))};
}

Encoded encode(const VaeModel& model, const TabularDataset& standardized,
               const std::vector<std::size_t>& rows) {
  return encode(model, encoder_bindings(model, standardized, rows));
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& noise) {
  if (mu.shape() != logvar.shape() || mu.shape() != noise.shape()) {
    throw ShapeError("reparameterize: mu " + shape_string(mu.shape()) + ", logvar " +
                     shape_string(logvar.shape()) + ", noise " + shape_string(noise.shape()));
  }
  Tensor z = mu;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += std::exp(0.5 * logvar[i]) * noise[i];
  return z;
}

Reconstruction decode(const VaeModel& model, const Tensor& z, const ConditionValues& conditions) {
  if (z.rank() != 2 || z.cols() != model.config().latent_dim) {
    throw ShapeError("decode: z has shape " + shape_string(z.shape()) + ", expected [B x " +
                     std::to_string(model.config().latent_dim) + "]");
  }
  Bindings inputs{{"z", z}};
  for (std::size_t c : model.layout().conditions) {
    const auto& name = model.schema()[c].name;
    auto it = conditions.find(name);
    if (it == conditions.end()) throw DataError("decode: missing condition '" + name + "'");
    if (it->second.size() != z.rows()) throw ShapeError("decode: condition '" + name + "' row count");
    std::vector<double> idx(it->second.begin(), it->second.end());
    inputs.emplace("cat:" + name, Tensor::vector(std::move(idx)));
  }
  Graph graph = build_decoder_graph(model);
  auto out = autodiff::evaluate(graph, model.parameters(), inputs);
  Reconstruction rec;
  if (auto it = out.find("cont"); it != out.end()) rec.continuous_means = std::move(it->second);
  else rec.continuous_means = Tensor({z.rows(), 0});
  for (std::size_t c : model.layout().categorical) {
    rec.logits.push_back(std::move(out.at("logits:" + model.schema()[c].name)));
  }
  return rec;
}

Tensor predict_target(const VaeModel& model, const Tensor& mu) {
  Graph graph;
  graph.set_output("y", add_regression_head(graph, model, graph.input("mu")));
  return autodiff::evaluate(graph, model.parameters(), {{"mu", mu}}, graph.output("y"));
}

namespace {

std::vector<double> softmax_row(const Tensor& logits, std::size_t r) {
  const std::size_t c = logits.cols();
  const double* row = logits.data() + r * c;
  const double mx = *std::max_element(row, row + c);
  std::vector<double> p(c);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) s += (p[j] = std::exp(row[j] - mx));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TabularDataset sample_prior(const VaeModel& model, std::size_t n,
                            const std::map<std::string, std::size_t>& conditions, std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample_prior: n must be >= 1");
  const auto& layout = model.layout();
  const auto& schema = model.schema();
  Rng rng(seed);
  Tensor z({n, model.config().latent_dim});
  for (double& v : z.values()) v = rng.normal();

  ConditionValues cond_rows;
  for (std::size_t c : layout.conditions) {
    auto it = conditions.find(schema[c].name);
    if (it == conditions.end()) throw ConfigError("sample_prior: condition '" + schema[c].name + "' not given");
    if (it->second >= schema[c].category_count()) {
      throw ConfigError("sample_prior: condition '" + schema[c].name + "' index out of range");
    }
    cond_rows[schema[c].name].assign(n, it->second);
  }
  for (const auto& [name, idx] : conditions) {
    auto c = schema.find(name);
    if (!c || std::find(layout.conditions.begin(), layout.conditions.end(), *c) == layout.conditions.end()) {
      throw ConfigError("sample_prior: '" + name + "' is not a condition column of this model");
    }
  }

  Reconstruction rec = decode(model, z, cond_rows);
  TabularDataset out(schema, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < layout.continuous.size(); ++j) {
      out.set(r, layout.continuous[j], rec.continuous_means.at(r, j));
    }
    for (std::size_t k = 0; k < layout.categorical.size(); ++k) {
      const auto p = softmax_row(rec.logits[k], r);
      out.set(r, layout.categorical[k], static_cast<double>(rng.categorical(p)));
    }
    for (std::size_t c : layout.conditions) {
      out.set(r, c, static_cast<double>(cond_rows[schema[c].name][r]));
    }
  }
  if (layout.target) {
    Tensor y = predict_target(model, z);
    for (std::size_t r = 0; r < n; ++r) out.set(r, *layout.target, y[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

nlohmann::json model_to_json(const VaeModel& model) {
  return {{"format", "cablevae-model"},
          {"format_version", kModelFormatVersion},
          {"config", model_config_to_json(model.config())},
          {"preprocessor", preprocessor_to_json(model.preprocessor())},
          {"trained", model.trained()},
          {"parameters", autodiff::parameters_to_json(model.parameters())}};
}

VaeModel model_from_json(const nlohmann::json& doc) {
  try {
    if (!doc.is_object() || doc.value("format", std::string()) != "cablevae-model") {
      throw ConfigError("not a cablevae model file");
    }
    const int version = doc.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw ConfigError("model format version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kModelFormatVersion) + ")");
    }
    return VaeModel(preprocessor_from_json(doc.at("preprocessor")), model_config_from_json(doc.at("config")),
                    autodiff::parameters_from_json(doc.at("parameters")), doc.at("trained").get<bool>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
}

void save_model(const VaeModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << model_to_json(model).dump(1) << "\n";
}

VaeModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return model_from_json(doc);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace cablevae
