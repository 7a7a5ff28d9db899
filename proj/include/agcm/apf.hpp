#pragma once

// Attentive proposal fusion: every proposal embedding is blended with a
// similarity-weighted average of the other proposals in its batch,
//
//   fused_i = alpha * p_i + (1 - alpha) * sum_{j != i} w_ij * p_j,
//   w_ij    = softmax_{j != i}(sim(p_i, p_j)).

#include <string_view>
#include <vector>

#include "agcm/types.hpp"

namespace agcm::apf {

enum class Metric { Cosine, NegEuclidean, Pearson };

std::string_view to_string(Metric metric);
/// Accepts "cosine", "euclidean"/"neg-euclidean", "pearson".
Metric parse_metric(std::string_view name);

/// Embedding rows with their class labels. Labels are class indices of the
/// consuming head; which index means background is the head's business.
struct ProposalBatch {
  Matrix embeddings;
  std::vector<int> labels;

  Eigen::Index size() const { return embeddings.rows(); }
  Eigen::Index dim() const { return embeddings.cols(); }
};

/// Throws unless rows are finite, M >= 1, and labels match rows and lie in
/// [0, num_classes).
void validate(const ProposalBatch& batch, int num_classes);

struct FusionConfig {
  double alpha = 0.8;
  Metric metric = Metric::Cosine;
  // Treat w_ij as constants in fuse_vjp (ablation switch).
  bool stop_attention_gradient = false;

  /// Throws InvalidArgument unless alpha lies in [0.5, 1].
  void validate() const;
};

/// M x M pairwise similarity matrix under `metric`. Metric errors carry the
/// offending row index.
Matrix similarity_matrix(const Matrix& embeddings, Metric metric);

/// Row-stochastic attention with an exact zero diagonal. A single proposal
/// gets an all-zero row.
Matrix attention_weights(const Matrix& embeddings, Metric metric);

Matrix fuse(const Matrix& embeddings, const FusionConfig& config);
ProposalBatch fuse(const ProposalBatch& batch, const FusionConfig& config);

/// Cotangent on the input embeddings given the cotangent of the fused rows.
Matrix fuse_vjp(const Matrix& embeddings, const FusionConfig& config, const Matrix& cotangent);

}  // namespace agcm::apf
