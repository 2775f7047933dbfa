#pragma once

// Reverse-mode differentiation over a static, topologically ordered graph of
// batch-major tensor operations. A Graph only describes the computation;
// parameter values live in a ParameterSet passed to every evaluation, so the
// same graph can be evaluated concurrently and the trainer is the only writer
// of parameters.

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cablevae/tensor.hpp"

namespace cablevae::autodiff {

struct NodeId {
  std::size_t index = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind {
  kInput,
  kParameter,
  kAffine,
  kRelu,
  kTanh,
  kExp,
  kSquare,
  kMap,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kEmbedding,
  kConcat,
  kSliceCols,
  kSoftmax,
  kLogSoftmax,
  kPick,
  kSum,
  kMeanRows,
};

const char* op_name(OpKind kind);

using ParameterSet = std::map<std::string, Tensor>;
using GradientSet = std::map<std::string, Tensor>;
using Bindings = std::map<std::string, Tensor>;

/// User-supplied elementwise function with its derivative.
struct ElementwiseFn {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
};

struct Node {
  OpKind kind = OpKind::kInput;
  std::vector<NodeId> args;
  std::string label;
  double constant = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  ElementwiseFn fn;
};

class Graph {
 public:
  NodeId input(const std::string& name);
  /// Declares a trainable leaf. Names must be unique within the graph.
  NodeId parameter(const std::string& name, std::vector<std::size_t> shape);

  /// x[B x in] * weight[in x out] + bias[out], bias broadcast over rows.
  NodeId affine(NodeId x, NodeId weight, NodeId bias, std::string label = {});
  NodeId relu(NodeId x, std::string label = {});
  NodeId tanh(NodeId x, std::string label = {});
  NodeId exp(NodeId x, std::string label = {});
  NodeId square(NodeId x, std::string label = {});
  NodeId map(NodeId x, ElementwiseFn fn, std::string label = {});
  NodeId add(NodeId a, NodeId b, std::string label = {});
  NodeId sub(NodeId a, NodeId b, std::string label = {});
  NodeId mul(NodeId a, NodeId b, std::string label = {});
  NodeId scale(NodeId x, double factor, std::string label = {});
  NodeId add_scalar(NodeId x, double offset, std::string label = {});
  /// Row lookup: indices[B] into dictionary[C x E] gives [B x E].
  NodeId embedding(NodeId indices, NodeId dictionary, std::string label = {});
  /// Column-wise concatenation of [B x k_i] blocks.
  NodeId concat(std::vector<NodeId> parts, std::string label = {});
  NodeId slice_cols(NodeId x, std::size_t begin, std::size_t end, std::string label = {});
  NodeId softmax(NodeId x, std::string label = {});
  NodeId log_softmax(NodeId x, std::string label = {});
  /// out[b] = x[b, indices[b]] as a [B x 1] column.
  NodeId pick(NodeId x, NodeId indices, std::string label = {});
  /// Sum of all entries, shape {1}.
  NodeId sum(NodeId x, std::string label = {});
  /// Sum of all entries divided by the row count, shape {1}.
  NodeId mean_rows(NodeId x, std::string label = {});

  void set_output(const std::string& name, NodeId node);
  NodeId output(const std::string& name) const;
  const std::map<std::string, NodeId>& outputs() const { return outputs_; }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id.index); }
  /// Human-readable node name used in error messages.
  std::string describe(NodeId id) const;

  const std::map<std::string, std::vector<std::size_t>>& parameter_shapes() const {
    return parameter_shapes_;
  }
  const std::map<std::string, NodeId>& inputs() const { return inputs_; }
  std::optional<NodeId> find_parameter(const std::string& name) const;

 private:
  NodeId push(Node node);
  void check_arg(NodeId id) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> inputs_;
  std::map<std::string, NodeId> parameters_;
  std::map<std::string, std::vector<std::size_t>> parameter_shapes_;
  std::map<std::string, NodeId> outputs_;
};

/// Node values from one forward pass; unset for nodes not needed by the
/// requested targets.
struct Evaluation {
  std::vector<std::optional<Tensor>> values;
  const Tensor& at(NodeId id) const;
};

/// Forward pass computing only the ancestors of `targets`.
Evaluation forward(const Graph& graph, const ParameterSet& params, const Bindings& inputs,
                   const std::vector<NodeId>& targets);

Tensor evaluate(const Graph& graph, const ParameterSet& params, const Bindings& inputs,
                NodeId target);

/// Evaluates every named output of the graph.
std::map<std::string, Tensor> evaluate(const Graph& graph, const ParameterSet& params,
                                       const Bindings& inputs);

struct GradientResult {
  double value = 0.0;
  GradientSet gradients;
  /// Nodes visited by the reverse sweep.
  std::size_t visits = 0;
  /// Forward values, so callers can read other outputs of the same pass.
  Evaluation evaluation;
};

/// d(output)/d(parameter) for every parameter declared in the graph.
/// Parameters the output does not depend on get zero gradients.
GradientResult gradients(const Graph& graph, const ParameterSet& params,
                         const Bindings& inputs, NodeId scalar_output);

struct GradientCheckEntry {
  std::string parameter;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradientCheckReport {
  bool passed = true;
  std::vector<GradientCheckEntry> entries;
  std::vector<std::string> failed_parameters;
};

/// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from being judged on rounding noise alone.
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Central finite differences on every parameter coordinate.
GradientCheckReport check_gradients(const Graph& graph, const ParameterSet& params,
                                    const Bindings& inputs, NodeId scalar_output,
                                    double step = 1e-5, double tolerance = 1e-4);

/// {name: {"shape": [...], "values": ["<decimal>", ...]}} with 17 significant
/// digits, which round-trips every double exactly.
nlohmann::json parameters_to_json(const ParameterSet& params);
ParameterSet parameters_from_json(const nlohmann::json& doc);

}  // namespace cablevae::autodiff
