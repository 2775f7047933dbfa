#include "cablevae/objective.hpp"

#include <algorithm>
#include <cmath>

#include "cablevae/error.hpp"

namespace cablevae::objective {

using autodiff::Graph;
using autodiff::NodeId;

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss alpha must lie in [0, 1]");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("loss beta must be finite and >= 0");
}

double continuous_nll(const Tensor& targets, const Tensor& predictions) {
  if (targets.shape() != predictions.shape()) {
    throw ShapeError("continuous_nll: targets " + shape_string(targets.shape()) +
                     " vs predictions " + shape_string(predictions.shape()));
  }
  const std::size_t n = targets.rows();
  if (n == 0) throw ShapeError("continuous_nll: no rows");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double e = targets[i] - predictions[i];
    total += 0.5 * (e * e) + kHalfLog2Pi;
  }
  return total / static_cast<double>(n);
}

double categorical_ce(const std::vector<std::vector<std::size_t>>& targets,
                      const std::vector<Tensor>& logits) {
  if (targets.size() != logits.size()) {
    throw ShapeError("categorical_ce: target and logit column counts differ");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const Tensor& z = logits[k];
    const std::size_t rows = z.rows(), c = z.cols();
    if (targets[k].size() != rows || rows == 0) {
      throw ShapeError("categorical_ce: column " + std::to_string(k) + " has " +
                       std::to_string(targets[k].size()) + " targets for " +
                       std::to_string(rows) + " logit rows");
    }
    double column = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t t = targets[k][r];
      if (t >= c) {
        throw DataError("categorical_ce: target index " + std::to_string(t) +
                        " invalid for " + std::to_string(c) + " categories");
      }
      const double* row = z.data() + r * c;
      const double mx = *std::max_element(row, row + c);
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
      column += -(row[t] - (mx + std::log(s)));
    }
    total += column / static_cast<double>(rows);
  }
  return total;
}

double kl_divergence(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape()) {
    throw ShapeError("kl_divergence: mu " + shape_string(mu.shape()) + " vs logvar " +
                     shape_string(logvar.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    total += 0.5 * (mu[i] * mu[i] + std::exp(logvar[i]) - logvar[i] - 1.0);
  }
  return total / static_cast<double>(mu.rows());
}

double combine(const LossWeights& weights, double cont, double cat, double kl) {
  return (weights.alpha * cont + (1.0 - weights.alpha) * cat) + weights.beta * kl;
}

LossBreakdown total_loss(const LossWeights& weights, const Tensor& cont_targets,
                         const std::vector<std::vector<std::size_t>>& cat_targets,
                         const Tensor& cont_predictions, const std::vector<Tensor>& logits,
                         const Tensor& mu, const Tensor& logvar) {
  weights.validate();
  LossBreakdown out;
  out.cont = cont_targets.empty() ? 0.0 : continuous_nll(cont_targets, cont_predictions);
  out.cat = logits.empty() ? 0.0 : categorical_ce(cat_targets, logits);
  out.kl = kl_divergence(mu, logvar);
  out.total = combine(weights, out.cont, out.cat, out.kl);
  return out;
}

NodeId add_continuous_nll(Graph& graph, NodeId targets, NodeId predictions) {
  NodeId residual = graph.sub(targets, predictions, "cont.residual");
  NodeId half_sq = graph.scale(graph.square(residual), 0.5);
  return graph.mean_rows(graph.add_scalar(half_sq, kHalfLog2Pi), "loss.cont");
}

NodeId add_categorical_ce(Graph& graph, const std::vector<std::pair<NodeId, NodeId>>& heads) {
  if (heads.empty()) throw std::invalid_argument("add_categorical_ce: no heads");
  std::optional<NodeId> total;
  for (const auto& [logits, indices] : heads) {
    NodeId picked = graph.pick(graph.log_softmax(logits), indices);
    NodeId column = graph.scale(graph.mean_rows(picked), -1.0);
    total = total ? graph.add(*total, column) : column;
  }
  return *total;
}

NodeId add_kl_divergence(Graph& graph, NodeId mu, NodeId logvar) {
  NodeId inner = graph.sub(graph.add(graph.square(mu), graph.exp(logvar)), logvar);
  return graph.mean_rows(graph.scale(graph.add_scalar(inner, -1.0), 0.5), "loss.kl");
}

NodeId add_total(Graph& graph, const LossWeights& weights, std::optional<NodeId> cont,
                 std::optional<NodeId> cat, NodeId kl) {
  weights.validate();
  // Mirrors combine(): (alpha*cont + (1-alpha)*cat) + beta*kl.
  std::optional<NodeId> recon;
  if (cont) recon = graph.scale(*cont, weights.alpha);
  if (cat) {
    NodeId c = graph.scale(*cat, 1.0 - weights.alpha);
    recon = recon ? graph.add(*recon, c) : c;
  }
  NodeId reg = graph.scale(kl, weights.beta);
  return recon ? graph.add(*recon, reg, "loss.total") : reg;
}

}  // namespace cablevae::objective
