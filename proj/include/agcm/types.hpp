#pragma once

#include <Eigen/Core>

namespace agcm {

// Rows are samples (proposals, class weights); row-major keeps a row contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Norms at or below this are rejected rather than perturbed.
inline constexpr double kNormEpsilon = 1e-12;

/// Dataset label of background (non-object) samples.
inline constexpr int kBackgroundLabel = -1;

}  // namespace agcm
