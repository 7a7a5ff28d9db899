#pragma once

// Seeded synthetic embeddings: one Gaussian bump per class around a unit
// mean direction, projected back onto the unit sphere. Base classes are
// abundant; every class gets only K samples in the adaptation split.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "agcm/types.hpp"

namespace agcm::data {

/// Two classes whose means sit at a fixed angle instead of min_angle_deg.
struct ConfusablePair {
  int first = 0;
  int second = 0;
  double angle_deg = 0.0;

  bool operator==(const ConfusablePair&) const = default;
};

struct DatasetSpec {
  int d = 32;
  int n_base = 7;
  int n_novel = 3;
  int samples_per_base = 500;
  int k = 10;
  double intra_sigma = 0.25;
  double min_angle_deg = 25.0;
  std::vector<ConfusablePair> confusable_pairs{{6, 7, 12.0}};
  double background_rate = 0.1;
  std::uint64_t seed = 0;

  int num_classes() const { return n_base + n_novel; }
  /// Throws InvalidArgument on any out-of-domain field.
  void validate() const;

  bool operator==(const DatasetSpec&) const = default;
};

/// Samples per class in the evaluation split.
inline constexpr int kEvalPerClass = 100;
/// Mean rejection-sampling attempts per class before giving up.
inline constexpr int kMaxMeanAttempts = 10000;

enum class Split { Base, KShot, Eval };
std::string_view to_string(Split split);

/// Rows with labels in [0, num_classes) or kBackgroundLabel. Base classes
/// occupy [0, num_base); novel classes follow.
struct Dataset {
  Matrix embeddings;
  std::vector<int> labels;
  Split split = Split::Eval;
  int num_classes = 0;
  int num_base = 0;
  std::optional<DatasetSpec> spec;

  Eigen::Index size() const { return embeddings.rows(); }
  Eigen::Index dim() const { return embeddings.cols(); }
  /// Count of rows per class; background is not counted.
  std::vector<int> class_counts() const;
  Dataset subset(const std::vector<Eigen::Index>& rows) const;
};

struct GeneratedData {
  Matrix class_means;  // num_classes x d, unit rows
  Dataset base;
  Dataset kshot;
  Dataset eval;
};

/// Throws InfeasibleSeparation when a class mean cannot be placed within
/// kMaxMeanAttempts draws.
Matrix generate_class_means(const DatasetSpec& spec);

GeneratedData generate(const DatasetSpec& spec);

/// Exactly k rows of every labelled class, seeded, without replacement, in
/// source order. Background rows are dropped. Throws ShotCountMismatch if a
/// class has fewer than k rows.
Dataset kshot_sample(const Dataset& dataset, int k, std::uint64_t seed);

/// Header "label,x0,...,x{d-1}"; background is -1; 17 significant digits.
void save_csv(const Dataset& dataset, const std::filesystem::path& path);

/// Class counts are inferred from the labels unless given.
Dataset load_csv(const std::filesystem::path& path, Split split = Split::Eval,
                 std::optional<int> num_classes = std::nullopt,
                 std::optional<int> num_base = std::nullopt);

/// Angle in degrees between two nonzero vectors.
double angle_deg(const Vector& a, const Vector& b);

}  // namespace agcm::data
