#pragma once

#include <random>
#include <vector>

#include "agcm/types.hpp"

namespace agcm::testing {

inline Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                       double sigma = 1.0) {
  std::normal_distribution<double> normal(0.0, sigma);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline Vector gaussian_vector(std::mt19937_64& rng, Eigen::Index n) {
  return gaussian(rng, n, 1).col(0);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline std::vector<int> random_labels(std::mt19937_64& rng, Eigen::Index m, int num_classes) {
  std::vector<int> labels(static_cast<std::size_t>(m));
  for (auto& y : labels) y = uniform_int(rng, 0, num_classes - 1);
  return labels;
}

inline Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

inline Matrix unflat(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace agcm::testing
