#pragma once

// Composite (C)VAE objective: weighted Gaussian NLL of the continuous
// columns, summed per-column cross-entropy of the categorical columns and the
// closed-form KL divergence of a diagonal Gaussian from N(0, I).
//
// Every term is available twice: as a plain function over tensors and as
// graph nodes for differentiation. Tests hold the two routes against each
// other.

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "cablevae/autodiff.hpp"
#include "cablevae/tensor.hpp"

namespace cablevae::objective {

struct LossWeights {
  double alpha = 0.07127;
  double beta = 0.0275;

  /// Throws ConfigError unless alpha is in [0, 1] and beta is finite, >= 0.
  void validate() const;
};

struct LossBreakdown {
  double cont = 0.0;
  double cat = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// 0.5 * ln(2 pi).
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// -(1/N) sum_i sum_j [-0.5 ln(2 pi) - 0.5 (x_ij - xhat_ij)^2].
double continuous_nll(const Tensor& targets, const Tensor& predictions);

/// Sum over columns of the row-averaged -ln softmax(logits)[target].
double categorical_ce(const std::vector<std::vector<std::size_t>>& targets,
                      const std::vector<Tensor>& logits);

/// (1/N) sum_i sum_l 0.5 (mu^2 + exp(logvar) - 1 - logvar).
double kl_divergence(const Tensor& mu, const Tensor& logvar);

/// alpha * cont + (1 - alpha) * cat + beta * kl, evaluated in the same order
/// as the graph route so both agree bit for bit.
double combine(const LossWeights& weights, double cont, double cat, double kl);

LossBreakdown total_loss(const LossWeights& weights, const Tensor& cont_targets,
                         const std::vector<std::vector<std::size_t>>& cat_targets,
                         const Tensor& cont_predictions, const std::vector<Tensor>& logits,
                         const Tensor& mu, const Tensor& logvar);

// Graph route.

autodiff::NodeId add_continuous_nll(autodiff::Graph& graph, autodiff::NodeId targets,
                                    autodiff::NodeId predictions);

/// Each entry pairs a [B x C_k] logits node with its [B] target indices node.
autodiff::NodeId add_categorical_ce(
    autodiff::Graph& graph,
    const std::vector<std::pair<autodiff::NodeId, autodiff::NodeId>>& heads);

autodiff::NodeId add_kl_divergence(autodiff::Graph& graph, autodiff::NodeId mu,
                                   autodiff::NodeId logvar);

/// Absent terms (no continuous or no categorical columns) contribute zero.
autodiff::NodeId add_total(autodiff::Graph& graph, const LossWeights& weights,
                           std::optional<autodiff::NodeId> cont,
                           std::optional<autodiff::NodeId> cat, autodiff::NodeId kl);

}  // namespace cablevae::objective
