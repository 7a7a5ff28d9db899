#pragma once

// Evaluation: confusion matrices, forgetting of base classes after
// adaptation, and cluster statistics of embeddings.

#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "agcm/head.hpp"
#include "agcm/synthdata.hpp"

namespace agcm::metrics {

/// Rows are true head classes, columns predicted head classes.
struct ConfusionMatrix {
  Eigen::Matrix<long long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> counts;
  std::vector<std::string> class_names;

  long long total() const { return counts.sum(); }
};

/// Predicts every eval row with the head (no fusion) and tallies outcomes.
/// Background rows land on the head's background class.
ConfusionMatrix confusion(const ClassifierHead& head, const data::Dataset& eval,
                          bool fuse_at_eval = false);

/// Builds a matrix from (true, predicted) head class pairs.
ConfusionMatrix confusion_from_predictions(std::span<const int> truth,
                                           std::span<const int> predicted, int num_classes);

/// 100 * off-diagonal mass / total. Throws EmptyMatrix when total is 0.
double confusion_percentage(const ConfusionMatrix& cm);

/// Names "c<k>" for object classes and "background" for the background row.
std::vector<std::string> class_names(int num_classes, int background_index);

/// Header "true\pred,<names...>", then one row per true class.
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);
ConfusionMatrix read_confusion_csv(const std::filesystem::path& path);

struct ForgettingReport {
  double acc_base_before = 0.0;
  double acc_base_after = 0.0;
  double acc_novel_after = 0.0;
  double percent_drop = 0.0;
};

/// percent_drop = 100 * (before - after) / before. Throws InvalidArgument
/// unless before > 0.
ForgettingReport forgetting(double acc_before, double acc_after, double acc_novel);

struct ClusterStats {
  std::vector<int> classes;             // sorted distinct labels
  std::vector<double> intra_variance;   // mean squared distance to centroid, per class
  double min_centroid_angle_deg = 0.0;  // smallest angle between two class centroids
};

/// Throws EmptyClass with fewer than two classes present.
ClusterStats cluster_stats(const Matrix& embeddings, std::span<const int> labels);

/// Per-class accuracy: correct / count, NaN for classes without rows.
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

}  // namespace agcm::metrics
