#include "agcm/apf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "agcm/errors.hpp"

namespace agcm::apf {

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::Cosine: return "cosine";
    case Metric::NegEuclidean: return "euclidean";
    case Metric::Pearson: return "pearson";
  }
  return "unknown";
}

Metric parse_metric(std::string_view name) {
  if (name == "cosine") return Metric::Cosine;
  if (name == "euclidean" || name == "neg-euclidean") return Metric::NegEuclidean;
  if (name == "pearson") return Metric::Pearson;
  throw InvalidArgument("unknown metric '" + std::string(name) + "'");
}

void validate(const ProposalBatch& batch, int num_classes) {
  if (batch.size() < 1) throw EmptyBatch("proposal batch has no rows");
  if (static_cast<Eigen::Index>(batch.labels.size()) != batch.size()) {
    throw DimensionMismatch("proposal batch: " + std::to_string(batch.labels.size()) +
                            " labels for " + std::to_string(batch.size()) + " rows");
  }
  if (!batch.embeddings.allFinite()) throw InvalidArgument("proposal batch: non-finite entry");
  for (int label : batch.labels) {
    if (label < 0 || label >= num_classes) {
      throw InvalidArgument("proposal batch: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

void FusionConfig::validate() const {
  if (!(alpha >= 0.5 && alpha <= 1.0)) {
    throw InvalidArgument("fusion alpha " + std::to_string(alpha) + " outside [0.5, 1.0]");
  }
}

namespace {

// Rows scaled to unit norm; for Pearson the rows are centered first.
Matrix unit_rows(const Matrix& embeddings, bool center) {
  Matrix rows = embeddings;
  if (center) rows.colwise() -= rows.rowwise().mean();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!(n > kNormEpsilon)) {
      const std::string msg = "proposal row " + std::to_string(i);
      if (center) throw DegenerateVariance(msg + " is constant", i);
      throw DegenerateNorm(msg + " has near-zero norm", i);
    }
    rows.row(i) /= n;
  }
  return rows;
}

// Backpropagates a cotangent on unit_rows() output to its input.
Matrix unit_rows_vjp(const Matrix& embeddings, const Matrix& units, const Matrix& cotangent,
                     bool center) {
  Matrix base = embeddings;
  if (center) base.colwise() -= base.rowwise().mean();
  Matrix out(cotangent.rows(), cotangent.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = base.row(i).norm();
    const double along = units.row(i).dot(cotangent.row(i));
    out.row(i) = (cotangent.row(i) - along * units.row(i)) / n;
  }
  if (center) out.colwise() -= out.rowwise().mean();
  return out;
}

Matrix pairwise_neg_distance(const Matrix& embeddings) {
  const Eigen::Index m = embeddings.rows();
  Matrix sim = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      sim(i, j) = sim(j, i) = -(embeddings.row(i) - embeddings.row(j)).norm();
    }
  }
  return sim;
}

void require_embeddings(const Matrix& embeddings) {
  if (embeddings.rows() < 1) throw EmptyBatch("no proposals to fuse");
  if (embeddings.cols() < 1) throw InvalidArgument("proposal embeddings have zero dimension");
  if (!embeddings.allFinite()) throw InvalidArgument("proposal embeddings: non-finite entry");
}

}  // namespace

Matrix similarity_matrix(const Matrix& embeddings, Metric metric) {
  require_embeddings(embeddings);
  if (metric == Metric::NegEuclidean) return pairwise_neg_distance(embeddings);
  const Matrix units = unit_rows(embeddings, metric == Metric::Pearson);
  Matrix sim = units * units.transpose();
  return sim.cwiseMax(-1.0).cwiseMin(1.0);
}

Matrix attention_weights(const Matrix& embeddings, Metric metric) {
  const Matrix sim = similarity_matrix(embeddings, metric);
  const Eigen::Index m = sim.rows();
  Matrix weights = Matrix::Zero(m, m);
  if (m < 2) return weights;
  for (Eigen::Index i = 0; i < m; ++i) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) top = std::max(top, sim(i, j));
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      weights(i, j) = std::exp(sim(i, j) - top);
      total += weights(i, j);
    }
    weights.row(i) /= total;
  }
  return weights;
}

Matrix fuse(const Matrix& embeddings, const FusionConfig& config) {
  config.validate();
  require_embeddings(embeddings);
  if (config.alpha == 1.0 || embeddings.rows() == 1) return embeddings;
  const Matrix weights = attention_weights(embeddings, config.metric);
  return config.alpha * embeddings + (1.0 - config.alpha) * (weights * embeddings);
}

ProposalBatch fuse(const ProposalBatch& batch, const FusionConfig& config) {
  return ProposalBatch{fuse(batch.embeddings, config), batch.labels};
}

Matrix fuse_vjp(const Matrix& embeddings, const FusionConfig& config, const Matrix& cotangent) {
  config.validate();
  require_embeddings(embeddings);
  if (cotangent.rows() != embeddings.rows() || cotangent.cols() != embeddings.cols()) {
    throw DimensionMismatch("fuse_vjp: cotangent shape differs from embeddings");
  }
  if (config.alpha == 1.0 || embeddings.rows() == 1) return cotangent;

  const double mix = 1.0 - config.alpha;
  const Matrix weights = attention_weights(embeddings, config.metric);
  Matrix grad = config.alpha * cotangent + mix * (weights.transpose() * cotangent);
  if (config.stop_attention_gradient) return grad;

  // Through the weights: d/dw_ij = mix * <g_i, p_j>, then the per-row
  // softmax over j != i, then the similarity itself.
  const Eigen::Index m = embeddings.rows();
  const Matrix grad_weights = mix * (cotangent * embeddings.transpose());
  Matrix grad_sim = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double inner = weights.row(i).dot(grad_weights.row(i));
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != i) grad_sim(i, j) = weights(i, j) * (grad_weights(i, j) - inner);
    }
  }

  if (config.metric == Metric::NegEuclidean) {
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        if (j == i || grad_sim(i, j) == 0.0) continue;
        const auto diff = (embeddings.row(i) - embeddings.row(j)).eval();
        const double dist = diff.norm();
        if (dist == 0.0) continue;
        grad.row(i) -= grad_sim(i, j) * diff / dist;
        grad.row(j) += grad_sim(i, j) * diff / dist;
      }
    }
    return grad;
  }

  const bool center = config.metric == Metric::Pearson;
  const Matrix units = unit_rows(embeddings, center);
  const Matrix grad_units = (grad_sim + grad_sim.transpose()) * units;
  grad += unit_rows_vjp(embeddings, units, grad_units, center);
  return grad;
}

}  // namespace agcm::apf
