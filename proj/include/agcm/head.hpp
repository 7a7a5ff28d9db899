#pragma once

// Desk-scale classifier head: a linear projection (standing in for the
// trainable RoI layers), attentive proposal fusion, and cosine scoring
// against one weight row per class, background included.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>

#include "agcm/apf.hpp"
#include "agcm/margin_loss.hpp"
#include "agcm/types.hpp"

namespace agcm {

struct ClassifierHead {
  Matrix projection;     // d_in x d_feat
  Vector bias;           // d_feat
  Matrix class_weights;  // N x d_feat, rows normalized on read
  int background_index = 0;
  apf::FusionConfig fusion;
  margin::MarginLossConfig loss;

  Eigen::Index input_dim() const { return projection.rows(); }
  Eigen::Index feature_dim() const { return projection.cols(); }
  int num_classes() const { return static_cast<int>(class_weights.rows()); }

  /// Throws unless shapes agree, N >= 2, the background index is a valid
  /// class, and every parameter is finite.
  void validate() const;

  /// Head class index of a dataset label (kBackgroundLabel maps to the
  /// background row).
  int class_index(int dataset_label) const {
    return dataset_label == kBackgroundLabel ? background_index : dataset_label;
  }
};

/// Projection uniform in [-1/sqrt(d_in), 1/sqrt(d_in)], zero bias, class
/// weights random unit vectors. The background row is the last one.
ClassifierHead make_head(Eigen::Index input_dim, Eigen::Index feature_dim, int num_classes,
                         std::uint64_t seed);

/// Random unit vector drawn from an isotropic Gaussian.
Vector random_unit_vector(Eigen::Index dim, std::mt19937_64& rng);

struct HeadGradients {
  Matrix projection;
  Vector bias;
  Matrix class_weights;
};

struct TrainStep {
  double loss = 0.0;
  HeadGradients gradients;
};

/// Projection rows: inputs * projection + bias.
Matrix project(const ClassifierHead& head, const Matrix& inputs);

/// project -> fuse -> cosine margin loss, with gradients for every
/// parameter. Batch labels are head class indices.
TrainStep forward_train(const ClassifierHead& head, const apf::ProposalBatch& batch);

struct Prediction {
  int class_id = 0;
  double score = 0.0;
  Vector cosines;
};

/// Scores one embedding. With fuse_at_eval and a context batch, the
/// projected embedding is fused together with the projected context rows
/// (the query is row 0) before scoring.
Prediction predict(const ClassifierHead& head, const Vector& embedding, bool fuse_at_eval = false,
                   const std::optional<apf::ProposalBatch>& context = std::nullopt);

/// Argmax class per row (lowest index wins ties), scoring without fusion
/// unless fuse_at_eval, in which case the rows fuse with each other.
std::vector<int> predict_classes(const ClassifierHead& head, const Matrix& inputs,
                                 bool fuse_at_eval = false);

/// parameters - learning_rate * gradients.
ClassifierHead apply_gradients(const ClassifierHead& head, const HeadGradients& gradients,
                               double learning_rate);

// Checkpoint layout (all integers and floats little-endian):
//   char[8]  magic "AGCMHEAD"
//   u32      version (1)
//   u64      d_in, d_feat, num_classes
//   i64      background_index
//   f64      alpha
//   u32      metric (0 cosine, 1 euclidean, 2 pearson)
//   u32      stop_attention_gradient (0/1)
//   f64      margin, beta
//   f64[d_in*d_feat]        projection, row-major
//   f64[d_feat]             bias
//   f64[num_classes*d_feat] class weights, row-major
// save_head also writes "<path>.txt" with the header fields as key = value.
inline constexpr char kHeadMagic[8] = {'A', 'G', 'C', 'M', 'H', 'E', 'A', 'D'};
inline constexpr std::uint32_t kHeadFormatVersion = 1;

void save_head(const ClassifierHead& head, const std::filesystem::path& path);
ClassifierHead load_head(const std::filesystem::path& path);

}  // namespace agcm
