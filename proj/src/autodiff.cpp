#include "cablevae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "cablevae/error.hpp"

namespace cablevae::autodiff {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kAffine: return "affine";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kExp: return "exp";
    case OpKind::kSquare: return "square";
    case OpKind::kMap: return "map";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConcat: return "concat";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kPick: return "pick";
    case OpKind::kSum: return "sum";
    case OpKind::kMeanRows: return "mean_rows";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Graph construction

NodeId Graph::push(Node node) {
  for (NodeId arg : node.args) check_arg(arg);
  nodes_.push_back(std::move(node));
  return NodeId{nodes_.size() - 1};
}

void Graph::check_arg(NodeId id) const {
  if (id.index >= nodes_.size()) {
    throw std::invalid_argument("graph argument refers to a node that does not exist yet");
  }
}

NodeId Graph::input(const std::string& name) {
  if (auto it = inputs_.find(name); it != inputs_.end()) return it->second;
  NodeId id = push(Node{.kind = OpKind::kInput, .label = name});
  inputs_.emplace(name, id);
  return id;
}

NodeId Graph::parameter(const std::string& name, std::vector<std::size_t> shape) {
  if (parameters_.count(name)) {
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
  NodeId id = push(Node{.kind = OpKind::kParameter, .label = name});
  parameters_.emplace(name, id);
  parameter_shapes_.emplace(name, std::move(shape));
  return id;
}

std::optional<NodeId> Graph::find_parameter(const std::string& name) const {
  auto it = parameters_.find(name);
  if (it == parameters_.end()) return std::nullopt;
  return it->second;
}

#define CABLEVAE_UNARY(method, op)                                   \
  NodeId Graph::method(NodeId x, std::string label) {                \
    return push(Node{.kind = op, .args = {x}, .label = std::move(label)}); \
  }

CABLEVAE_UNARY(relu, OpKind::kRelu)
CABLEVAE_UNARY(tanh, OpKind::kTanh)
CABLEVAE_UNARY(exp, OpKind::kExp)
CABLEVAE_UNARY(square, OpKind::kSquare)
CABLEVAE_UNARY(softmax, OpKind::kSoftmax)
CABLEVAE_UNARY(log_softmax, OpKind::kLogSoftmax)
CABLEVAE_UNARY(sum, OpKind::kSum)
CABLEVAE_UNARY(mean_rows, OpKind::kMeanRows)
#undef CABLEVAE_UNARY

#define CABLEVAE_BINARY(method, op)                                         \
  NodeId Graph::method(NodeId a, NodeId b, std::string label) {             \
    return push(Node{.kind = op, .args = {a, b}, .label = std::move(label)}); \
  }

CABLEVAE_BINARY(add, OpKind::kAdd)
CABLEVAE_BINARY(sub, OpKind::kSub)
CABLEVAE_BINARY(mul, OpKind::kMul)
CABLEVAE_BINARY(embedding, OpKind::kEmbedding)
CABLEVAE_BINARY(pick, OpKind::kPick)
#undef CABLEVAE_BINARY

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias, std::string label) {
  return push(Node{.kind = OpKind::kAffine, .args = {x, weight, bias}, .label = std::move(label)});
}

NodeId Graph::map(NodeId x, ElementwiseFn fn, std::string label) {
  if (!fn.value || !fn.derivative) {
    throw std::invalid_argument("map node needs both a value and a derivative function");
  }
  return push(Node{.kind = OpKind::kMap, .args = {x}, .label = std::move(label), .fn = std::move(fn)});
}

NodeId Graph::scale(NodeId x, double factor, std::string label) {
  return push(Node{.kind = OpKind::kScale, .args = {x}, .label = std::move(label), .constant = factor});
}

NodeId Graph::add_scalar(NodeId x, double offset, std::string label) {
  return push(Node{.kind = OpKind::kAddScalar, .args = {x}, .label = std::move(label), .constant = offset});
}

NodeId Graph::concat(std::vector<NodeId> parts, std::string label) {
  if (parts.empty()) throw std::invalid_argument("concat of zero parts");
  return push(Node{.kind = OpKind::kConcat, .args = std::move(parts), .label = std::move(label)});
}

NodeId Graph::slice_cols(NodeId x, std::size_t begin, std::size_t end, std::string label) {
  if (end <= begin) throw std::invalid_argument("slice_cols needs begin < end");
  return push(Node{.kind = OpKind::kSliceCols, .args = {x}, .label = std::move(label), .begin = begin, .end = end});
}

void Graph::set_output(const std::string& name, NodeId node) {
  check_arg(node);
  outputs_[name] = node;
}

NodeId Graph::output(const std::string& name) const {
  auto it = outputs_.find(name);
  if (it == outputs_.end()) throw std::out_of_range("graph has no output '" + name + "'");
  return it->second;
}

std::string Graph::describe(NodeId id) const {
  const Node& n = nodes_.at(id.index);
  std::string s = std::string(op_name(n.kind)) + "#" + std::to_string(id.index);
  if (!n.label.empty()) s += " '" + n.label + "'";
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass

const Tensor& Evaluation::at(NodeId id) const {
  const auto& v = values.at(id.index);
  if (!v) throw std::logic_error("node value was not computed");
  return *v;
}

namespace {

std::vector<bool> ancestors(const Graph& graph, const std::vector<NodeId>& targets) {
  std::vector<bool> needed(graph.size(), false);
  for (NodeId t : targets) needed.at(t.index) = true;
  for (std::size_t i = graph.size(); i > 0; --i) {
    if (!needed[i - 1]) continue;
    for (NodeId a : graph.node(NodeId{i - 1}).args) needed[a.index] = true;
  }
  return needed;
}

[[noreturn]] void shape_fail(const Graph& g, NodeId id, const std::string& what) {
  throw ShapeError(g.describe(id) + ": " + what);
}

void require_rank2(const Graph& g, NodeId id, const Tensor& t, const char* role) {
  if (t.rank() != 2) {
    shape_fail(g, id, std::string(role) + " must be a matrix, got " + shape_string(t.shape()));
  }
}

std::size_t checked_index(const Graph& g, NodeId id, double raw, std::size_t limit) {
  if (!(raw >= 0.0) || raw != std::floor(raw) || raw >= static_cast<double>(limit)) {
    shape_fail(g, id, "index " + std::to_string(raw) + " outside [0, " + std::to_string(limit) + ")");
  }
  return static_cast<std::size_t>(raw);
}

Tensor compute(const Graph& g, NodeId id, const Evaluation& ev, const ParameterSet& params,
               const Bindings& inputs) {
  const Node& n = g.node(id);
  auto arg = [&](std::size_t k) -> const Tensor& { return ev.at(n.args[k]); };

  switch (n.kind) {
    case OpKind::kInput: {
      auto it = inputs.find(n.label);
      if (it == inputs.end()) throw DataError("missing input '" + n.label + "'");
      return it->second;
    }
    case OpKind::kParameter: {
      auto it = params.find(n.label);
      if (it == params.end()) throw DataError("missing parameter '" + n.label + "'");
      const auto& declared = g.parameter_shapes().at(n.label);
      if (it->second.shape() != declared) {
        shape_fail(g, id, "parameter has shape " + shape_string(it->second.shape()) +
                              ", declared " + shape_string(declared));
      }
      return it->second;
    }
    case OpKind::kAffine: {
      const Tensor& x = arg(0);
      const Tensor& w = arg(1);
      const Tensor& b = arg(2);
      require_rank2(g, id, x, "input");
      require_rank2(g, id, w, "weight");
      if (w.shape()[0] != x.cols() || b.rank() != 1 || b.size() != w.cols()) {
        shape_fail(g, id, "cannot apply weight " + shape_string(w.shape()) + " and bias " +
                              shape_string(b.shape()) + " to input " + shape_string(x.shape()));
      }
      const std::size_t rows = x.rows(), in = x.cols(), out = w.cols();
      Tensor y({rows, out});
      for (std::size_t r = 0; r < rows; ++r) {
        double* yr = y.data() + r * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = b[o];
        const double* xr = x.data() + r * in;
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xr[i];
          if (xi == 0.0) continue;
          const double* wi = w.data() + i * out;
          for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
        }
      }
      return y;
    }
    case OpKind::kRelu:
    case OpKind::kTanh:
    case OpKind::kExp:
    case OpKind::kSquare:
    case OpKind::kMap:
    case OpKind::kScale:
    case OpKind::kAddScalar: {
      Tensor y = arg(0);
      for (double& v : y.values()) {
        switch (n.kind) {
          case OpKind::kRelu: v = v > 0.0 ? v : 0.0; break;
          case OpKind::kTanh: v = std::tanh(v); break;
          case OpKind::kExp: v = std::exp(v); break;
          case OpKind::kSquare: v = v * v; break;
          case OpKind::kMap: v = n.fn.value(v); break;
          case OpKind::kScale: v = n.constant * v; break;
          default: v = v + n.constant; break;
        }
      }
      return y;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      if (a.shape() != b.shape()) {
        shape_fail(g, id, "operands " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
      }
      Tensor y = a;
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (n.kind == OpKind::kAdd) y[i] += b[i];
        else if (n.kind == OpKind::kSub) y[i] -= b[i];
        else y[i] *= b[i];
      }
      return y;
    }
    case OpKind::kEmbedding: {
      const Tensor& idx = arg(0);
      const Tensor& dict = arg(1);
      require_rank2(g, id, dict, "dictionary");
      const std::size_t dim = dict.cols();
      Tensor y({idx.size(), dim});
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::size_t k = checked_index(g, id, idx[r], dict.rows());
        std::copy_n(dict.data() + k * dim, dim, y.data() + r * dim);
      }
      return y;
    }
    case OpKind::kConcat: {
      std::size_t rows = 0, width = 0;
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        const Tensor& p = arg(k);
        require_rank2(g, id, p, "concat part");
        if (k == 0) rows = p.rows();
        if (p.rows() != rows) {
          shape_fail(g, id, "row counts differ: " + std::to_string(rows) + " vs " +
                                std::to_string(p.rows()));
        }
        width += p.cols();
      }
      Tensor y({rows, width});
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        const Tensor& p = arg(k);
        for (std::size_t r = 0; r < rows; ++r) {
          std::copy_n(p.data() + r * p.cols(), p.cols(), y.data() + r * width + offset);
        }
        offset += p.cols();
      }
      return y;
    }
    case OpKind::kSliceCols: {
      const Tensor& x = arg(0);
      require_rank2(g, id, x, "input");
      if (n.end > x.cols()) {
        shape_fail(g, id, "slice end " + std::to_string(n.end) + " beyond width " +
                              std::to_string(x.cols()));
      }
      const std::size_t w = n.end - n.begin;
      Tensor y({x.rows(), w});
      for (std::size_t r = 0; r < x.rows(); ++r) {
        std::copy_n(x.data() + r * x.cols() + n.begin, w, y.data() + r * w);
      }
      return y;
    }
    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax: {
      const Tensor& x = arg(0);
      require_rank2(g, id, x, "input");
      Tensor y = x;
      const std::size_t c = x.cols();
      for (std::size_t r = 0; r < x.rows(); ++r) {
        double* row = y.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        if (n.kind == OpKind::kSoftmax) {
          for (std::size_t j = 0; j < c; ++j) row[j] = std::exp(row[j] - mx) / z;
        } else {
          const double log_z = mx + std::log(z);
          for (std::size_t j = 0; j < c; ++j) row[j] -= log_z;
        }
      }
      return y;
    }
    case OpKind::kPick: {
      const Tensor& x = arg(0);
      const Tensor& idx = arg(1);
      require_rank2(g, id, x, "input");
      if (idx.size() != x.rows()) {
        shape_fail(g, id, std::to_string(idx.size()) + " indices for " + std::to_string(x.rows()) + " rows");
      }
      Tensor y({x.rows(), 1});
      for (std::size_t r = 0; r < x.rows(); ++r) {
        y[r] = x.at(r, checked_index(g, id, idx[r], x.cols()));
      }
      return y;
    }
    case OpKind::kSum:
    case OpKind::kMeanRows: {
      const Tensor& x = arg(0);
      double s = 0.0;
      for (double v : x.values()) s += v;
      if (n.kind == OpKind::kMeanRows) {
        if (x.rows() == 0 || x.empty()) shape_fail(g, id, "mean over zero rows");
        s /= static_cast<double>(x.rows());
      }
      return Tensor::scalar(s);
    }
  }
  throw std::logic_error("unknown op");
}

Tensor& adjoint_slot(std::vector<std::optional<Tensor>>& adj, NodeId id,
                     const std::vector<std::size_t>& shape) {
  auto& slot = adj[id.index];
  if (!slot) slot = Tensor(shape);
  return *slot;
}

// Propagates the adjoint of node `id` into its arguments.
void backward(const Graph& g, NodeId id, const Evaluation& ev, const Tensor& dy,
              std::vector<std::optional<Tensor>>& adj, const std::vector<bool>& needs_grad) {
  const Node& n = g.node(id);
  auto arg = [&](std::size_t k) -> const Tensor& { return ev.at(n.args[k]); };
  auto wants = [&](std::size_t k) { return needs_grad[n.args[k].index]; };
  const Tensor& y = ev.at(id);

  switch (n.kind) {
    case OpKind::kInput:
    case OpKind::kParameter:
      return;
    case OpKind::kAffine: {
      const Tensor& x = arg(0);
      const Tensor& w = arg(1);
      const std::size_t rows = x.rows(), in = x.cols(), out = w.cols();
      if (wants(0)) {
        Tensor& dx = adjoint_slot(adj, n.args[0], x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dyr = dy.data() + r * out;
          double* dxr = dx.data() + r * in;
          for (std::size_t i = 0; i < in; ++i) {
            const double* wi = w.data() + i * out;
            double s = 0.0;
            for (std::size_t o = 0; o < out; ++o) s += dyr[o] * wi[o];
            dxr[i] += s;
          }
        }
      }
      if (wants(1)) {
        Tensor& dw = adjoint_slot(adj, n.args[1], w.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = x.data() + r * in;
          const double* dyr = dy.data() + r * out;
          for (std::size_t i = 0; i < in; ++i) {
            const double xi = xr[i];
            if (xi == 0.0) continue;
            double* dwi = dw.data() + i * out;
            for (std::size_t o = 0; o < out; ++o) dwi[o] += xi * dyr[o];
          }
        }
      }
      if (wants(2)) {
        Tensor& db = adjoint_slot(adj, n.args[2], arg(2).shape());
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t o = 0; o < out; ++o) db[o] += dy[r * out + o];
        }
      }
      return;
    }
    case OpKind::kRelu:
    case OpKind::kTanh:
    case OpKind::kExp:
    case OpKind::kSquare:
    case OpKind::kMap:
    case OpKind::kScale:
    case OpKind::kAddScalar: {
      if (!wants(0)) return;
      const Tensor& x = arg(0);
      Tensor& dx = adjoint_slot(adj, n.args[0], x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) {
        double d = 0.0;
        switch (n.kind) {
          case OpKind::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
          case OpKind::kTanh: d = 1.0 - y[i] * y[i]; break;
          case OpKind::kExp: d = y[i]; break;
          case OpKind::kSquare: d = 2.0 * x[i]; break;
          case OpKind::kMap: d = n.fn.derivative(x[i]); break;
          case OpKind::kScale: d = n.constant; break;
          default: d = 1.0; break;
        }
        dx[i] += d * dy[i];
      }
      return;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Tensor& a = arg(0);
      const Tensor& b = arg(1);
      if (wants(0)) {
        Tensor& da = adjoint_slot(adj, n.args[0], a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) {
          da[i] += n.kind == OpKind::kMul ? dy[i] * b[i] : dy[i];
        }
      }
      if (wants(1)) {
        Tensor& db = adjoint_slot(adj, n.args[1], b.shape());
        for (std::size_t i = 0; i < b.size(); ++i) {
          if (n.kind == OpKind::kAdd) db[i] += dy[i];
          else if (n.kind == OpKind::kSub) db[i] -= dy[i];
          else db[i] += dy[i] * a[i];
        }
      }
      return;
    }
    case OpKind::kEmbedding: {
      if (!wants(1)) return;
      const Tensor& idx = arg(0);
      const Tensor& dict = arg(1);
      Tensor& dd = adjoint_slot(adj, n.args[1], dict.shape());
      const std::size_t dim = dict.cols();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto k = static_cast<std::size_t>(idx[r]);
        for (std::size_t e = 0; e < dim; ++e) dd[k * dim + e] += dy[r * dim + e];
      }
      return;
    }
    case OpKind::kConcat: {
      const std::size_t width = y.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < n.args.size(); ++k) {
        const Tensor& p = arg(k);
        if (wants(k)) {
          Tensor& dp = adjoint_slot(adj, n.args[k], p.shape());
          for (std::size_t r = 0; r < p.rows(); ++r) {
            for (std::size_t c = 0; c < p.cols(); ++c) {
              dp[r * p.cols() + c] += dy[r * width + offset + c];
            }
          }
        }
        offset += p.cols();
      }
      return;
    }
    case OpKind::kSliceCols: {
      if (!wants(0)) return;
      const Tensor& x = arg(0);
      Tensor& dx = adjoint_slot(adj, n.args[0], x.shape());
      const std::size_t w = n.end - n.begin;
      for (std::size_t r = 0; r < x.rows(); ++r) {
        for (std::size_t c = 0; c < w; ++c) dx[r * x.cols() + n.begin + c] += dy[r * w + c];
      }
      return;
    }
    case OpKind::kSoftmax: {
      if (!wants(0)) return;
      Tensor& dx = adjoint_slot(adj, n.args[0], y.shape());
      const std::size_t c = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += dy[r * c + j] * y[r * c + j];
        for (std::size_t j = 0; j < c; ++j) dx[r * c + j] += y[r * c + j] * (dy[r * c + j] - dot);
      }
      return;
    }
    case OpKind::kLogSoftmax: {
      if (!wants(0)) return;
      Tensor& dx = adjoint_slot(adj, n.args[0], y.shape());
      const std::size_t c = y.cols();
      for (std::size_t r = 0; r < y.rows(); ++r) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) total += dy[r * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          dx[r * c + j] += dy[r * c + j] - std::exp(y[r * c + j]) * total;
        }
      }
      return;
    }
    case OpKind::kPick: {
      if (!wants(0)) return;
      const Tensor& x = arg(0);
      const Tensor& idx = arg(1);
      Tensor& dx = adjoint_slot(adj, n.args[0], x.shape());
      for (std::size_t r = 0; r < x.rows(); ++r) {
        dx[r * x.cols() + static_cast<std::size_t>(idx[r])] += dy[r];
      }
      return;
    }
    case OpKind::kSum:
    case OpKind::kMeanRows: {
      if (!wants(0)) return;
      const Tensor& x = arg(0);
      Tensor& dx = adjoint_slot(adj, n.args[0], x.shape());
      double d = dy[0];
      if (n.kind == OpKind::kMeanRows) d /= static_cast<double>(x.rows());
      for (double& v : dx.values()) v += d;
      return;
    }
  }
}

}  // namespace

Evaluation forward(const Graph& graph, const ParameterSet& params, const Bindings& inputs,
                   const std::vector<NodeId>& targets) {
  const std::vector<bool> needed = ancestors(graph, targets);
  Evaluation ev;
  ev.values.resize(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (!needed[i]) continue;
    ev.values[i] = compute(graph, NodeId{i}, ev, params, inputs);
  }
  return ev;
}

Tensor evaluate(const Graph& graph, const ParameterSet& params, const Bindings& inputs,
                NodeId target) {
  Evaluation ev = forward(graph, params, inputs, {target});
  return std::move(*ev.values[target.index]);
}

std::map<std::string, Tensor> evaluate(const Graph& graph, const ParameterSet& params,
                                       const Bindings& inputs) {
  std::vector<NodeId> targets;
  for (const auto& [name, id] : graph.outputs()) targets.push_back(id);
  Evaluation ev = forward(graph, params, inputs, targets);
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : graph.outputs()) out.emplace(name, ev.at(id));
  return out;
}

GradientResult gradients(const Graph& graph, const ParameterSet& params, const Bindings& inputs,
                         NodeId scalar_output) {
  Evaluation ev = forward(graph, params, inputs, {scalar_output});
  const Tensor& out = ev.at(scalar_output);
  if (out.size() != 1) {
    throw ShapeError(graph.describe(scalar_output) + ": gradient requires a scalar output, got " +
                     shape_string(out.shape()));
  }

  // A node needs an adjoint only if some parameter lies beneath it.
  std::vector<bool> needs_grad(graph.size(), false);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Node& n = graph.node(NodeId{i});
    if (n.kind == OpKind::kParameter) {
      needs_grad[i] = true;
      continue;
    }
    for (NodeId a : n.args) needs_grad[i] = needs_grad[i] || needs_grad[a.index];
  }

  GradientResult result;
  result.value = out.item();
  std::vector<std::optional<Tensor>> adj(graph.size());
  adj[scalar_output.index] = Tensor::scalar(1.0);
  for (std::size_t i = scalar_output.index + 1; i > 0; --i) {
    const NodeId id{i - 1};
    if (!ev.values[id.index]) continue;
    ++result.visits;
    if (!adj[id.index]) continue;
    backward(graph, id, ev, *adj[id.index], adj, needs_grad);
  }

  for (const auto& [name, shape] : graph.parameter_shapes()) {
    Tensor grad(shape);
    for (std::size_t i = 0; i < graph.size(); ++i) {
      const Node& n = graph.node(NodeId{i});
      if (n.kind == OpKind::kParameter && n.label == name && adj[i]) grad = *adj[i];
    }
    result.gradients.emplace(name, std::move(grad));
  }
  result.evaluation = std::move(ev);
  return result;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

GradientCheckReport check_gradients(const Graph& graph, const ParameterSet& params,
                                    const Bindings& inputs, NodeId scalar_output, double step,
                                    double tolerance) {
  if (!(step > 0.0) || !(tolerance > 0.0)) {
    throw std::invalid_argument("check_gradients: step and tolerance must be positive");
  }
  const GradientResult analytic = gradients(graph, params, inputs, scalar_output);
  ParameterSet probe = params;
  GradientCheckReport report;
  for (const auto& [name, grad] : analytic.gradients) {
    GradientCheckEntry entry{.parameter = name};
    Tensor& values = probe.at(name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + step;
      const double up = evaluate(graph, probe, inputs, scalar_output).item();
      values[i] = original - step;
      const double down = evaluate(graph, probe, inputs, scalar_output).item();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(grad[i], numeric);
      if (err > entry.max_relative_error || i == 0) {
        entry.max_relative_error = err;
        entry.worst_index = i;
        entry.analytic = grad[i];
        entry.numeric = numeric;
      }
    }
    if (entry.max_relative_error > tolerance) {
      report.passed = false;
      report.failed_parameters.push_back(name);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

nlohmann::json parameters_to_json(const ParameterSet& params) {
  nlohmann::json doc = nlohmann::json::object();
  char buf[40];
  for (const auto& [name, t] : params) {
    nlohmann::json values = nlohmann::json::array();
    for (double v : t.values()) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      values.push_back(buf);
    }
    doc[name] = {{"shape", t.shape()}, {"values", std::move(values)}};
  }
  return doc;
}

ParameterSet parameters_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("parameter block must be a JSON object");
  ParameterSet params;
  for (const auto& [name, entry] : doc.items()) {
    try {
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      std::vector<double> values;
      for (const auto& v : entry.at("values")) {
        const auto text = v.get<std::string>();
        std::size_t used = 0;
        values.push_back(std::stod(text, &used));
        if (used != text.size()) throw ConfigError("trailing characters in '" + text + "'");
      }
      params.emplace(name, Tensor(std::move(shape), std::move(values)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("parameter '" + name + "': " + e.what());
    } catch (const std::logic_error& e) {
      throw ConfigError("parameter '" + name + "': " + e.what());
    } catch (const ShapeError& e) {
      throw ConfigError("parameter '" + name + "': " + e.what());
    }
  }
  return params;
}

}  // namespace cablevae::autodiff
