#include "agcm/margin_loss.hpp"

#include <cmath>
#include <string>

#include "agcm/errors.hpp"

namespace agcm::margin {

void MarginLossConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw InvalidArgument("margin loss: beta must be positive, got " + std::to_string(beta));
  }
  if (!(margin >= -1.0 && margin <= 1.0)) {
    throw InvalidArgument("margin loss: margin " + std::to_string(margin) + " outside [-1, 1]");
  }
}

namespace {

struct UnitRows {
  Matrix units;
  Vector norms;
};

UnitRows unit_rows(const Matrix& rows, const char* what) {
  if (!rows.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite entry");
  UnitRows out{rows, Vector(rows.rows())};
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double n = rows.row(i).norm();
    if (!(n > kNormEpsilon)) {
      throw DegenerateNorm(std::string(what) + " row " + std::to_string(i) + " has near-zero norm",
                           i);
    }
    out.norms[i] = n;
    out.units.row(i) /= n;
  }
  return out;
}

Matrix normalize_rows_vjp(const UnitRows& rows, const Matrix& cotangent) {
  Matrix out(cotangent.rows(), cotangent.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double along = rows.units.row(i).dot(cotangent.row(i));
    out.row(i) = (cotangent.row(i) - along * rows.units.row(i)) / rows.norms[i];
  }
  return out;
}

void check_inputs(const Matrix& features, const Matrix& weights, std::span<const int> labels) {
  if (features.rows() == 0) throw EmptyBatch("margin loss: empty batch");
  if (features.cols() != weights.cols()) {
    throw DimensionMismatch("margin loss: feature dim " + std::to_string(features.cols()) +
                            " vs weight dim " + std::to_string(weights.cols()));
  }
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw DimensionMismatch("margin loss: label count differs from feature rows");
  }
}

void check_labels(std::span<const int> labels, Eigen::Index num_classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw InvalidArgument("margin loss: label " + std::to_string(labels[i]) + " at row " +
                            std::to_string(i) + " outside [0, " + std::to_string(num_classes) +
                            ")");
    }
  }
}

double row_log_sum_exp(const Matrix& logits, Eigen::Index i) {
  const double top = logits.row(i).maxCoeff();
  return top + std::log((logits.row(i).array() - top).exp().sum());
}

// -log softmax(logits.row(i))[target], computed relative to the target logit
// so that a confidently correct row keeps its tiny loss instead of rounding to 0.
double row_nll(const Matrix& logits, Eigen::Index i, int target) {
  const Eigen::ArrayXd shifted = (logits.row(i).array() - logits(i, target)).transpose();
  const double top = shifted.maxCoeff();
  if (top > 0.0) return top + std::log((shifted - top).exp().sum());
  double rest = 0.0;
  for (Eigen::Index j = 0; j < shifted.size(); ++j) {
    if (j != target) rest += std::exp(shifted[j]);
  }
  return std::log1p(rest);
}

}  // namespace

Matrix class_cosines(const Matrix& features, const Matrix& weights) {
  if (features.cols() != weights.cols()) {
    throw DimensionMismatch("class_cosines: feature and weight dimensions differ");
  }
  const Matrix cosines = unit_rows(features, "feature").units *
                         unit_rows(weights, "class weight").units.transpose();
  return cosines.cwiseMax(-1.0).cwiseMin(1.0);
}

Matrix margin_logits(const Matrix& cosines, std::span<const int> labels,
                     const MarginLossConfig& config) {
  config.validate();
  if (static_cast<Eigen::Index>(labels.size()) != cosines.rows()) {
    throw DimensionMismatch("margin_logits: label count differs from rows");
  }
  check_labels(labels, cosines.cols());
  Matrix logits = config.beta * cosines;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y != config.background_index) logits(i, y) = config.beta * (cosines(i, y) - config.margin);
  }
  return logits;
}

Vector sample_log_likelihoods(const Matrix& features, const Matrix& weights,
                              std::span<const int> labels, const MarginLossConfig& config) {
  check_inputs(features, weights, labels);
  const Matrix logits = margin_logits(class_cosines(features, weights), labels, config);
  Vector out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out[i] = -row_nll(logits, i, labels[i]);
  }
  return out;
}

double loss_forward(const Matrix& features, const Matrix& weights, std::span<const int> labels,
                    const MarginLossConfig& config) {
  return -sample_log_likelihoods(features, weights, labels, config).mean();
}

LossAndGradients loss_and_gradients(const Matrix& features, const Matrix& weights,
                                    std::span<const int> labels, const MarginLossConfig& config) {
  config.validate();
  check_inputs(features, weights, labels);
  check_labels(labels, weights.rows());
  const UnitRows f = unit_rows(features, "feature");
  const UnitRows w = unit_rows(weights, "class weight");
  const Matrix cosines = (f.units * w.units.transpose()).cwiseMax(-1.0).cwiseMin(1.0);
  const Matrix logits = margin_logits(cosines, labels, config);

  const auto m = static_cast<double>(features.rows());
  LossAndGradients out;
  // d loss / d logits = (softmax - onehot) / M; the margin is a constant shift.
  Matrix grad_logits(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double lse = row_log_sum_exp(logits, i);
    total += row_nll(logits, i, labels[i]);
    grad_logits.row(i) = (logits.row(i).array() - lse).exp();
    grad_logits(i, labels[i]) -= 1.0;
  }
  out.loss = total / m;
  const Matrix grad_cos = (config.beta / m) * grad_logits;
  out.gradients.features = normalize_rows_vjp(f, grad_cos * w.units);
  out.gradients.weights = normalize_rows_vjp(w, grad_cos.transpose() * f.units);
  return out;
}

LossGradients loss_vjp(const Matrix& features, const Matrix& weights, std::span<const int> labels,
                       const MarginLossConfig& config) {
  return loss_and_gradients(features, weights, labels, config).gradients;
}

}  // namespace agcm::margin
