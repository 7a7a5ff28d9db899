#pragma once

// Cosine margin cross-entropy. For sample i with label y_i the logits are
// beta * cos(z_i, W_j), except the target logit, which becomes
// beta * (cos(z_i, W_{y_i}) - m) unless y_i is the background class. The
// loss is the mean negative log-softmax of the target logit.

#include <span>
#include <vector>

#include "agcm/types.hpp"

namespace agcm::margin {

struct MarginLossConfig {
  double margin = 0.2;
  double beta = 20.0;
  // Class exempt from the margin; -1 when there is none.
  int background_index = -1;

  /// Throws InvalidArgument unless beta > 0 and margin lies in [-1, 1].
  void validate() const;
};

/// Entry (i, j) = cos(features_i, weights_j). Rows of either matrix with
/// near-zero norm raise DegenerateNorm carrying that row index.
Matrix class_cosines(const Matrix& features, const Matrix& weights);

Matrix margin_logits(const Matrix& cosines, std::span<const int> labels,
                     const MarginLossConfig& config);

/// Per-sample log-likelihoods l_i (each <= 0 up to rounding).
Vector sample_log_likelihoods(const Matrix& features, const Matrix& weights,
                              std::span<const int> labels, const MarginLossConfig& config);

double loss_forward(const Matrix& features, const Matrix& weights, std::span<const int> labels,
                    const MarginLossConfig& config);

struct LossGradients {
  Matrix features;
  Matrix weights;
};

struct LossAndGradients {
  double loss = 0.0;
  LossGradients gradients;
};

LossGradients loss_vjp(const Matrix& features, const Matrix& weights, std::span<const int> labels,
                       const MarginLossConfig& config);

/// Forward and backward in one pass.
LossAndGradients loss_and_gradients(const Matrix& features, const Matrix& weights,
                                    std::span<const int> labels, const MarginLossConfig& config);

}  // namespace agcm::margin
