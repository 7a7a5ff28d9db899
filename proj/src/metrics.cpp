#include "agcm/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "agcm/errors.hpp"

namespace agcm::metrics {

std::vector<std::string> class_names(int num_classes, int background_index) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    names.push_back(c == background_index ? "background" : "c" + std::to_string(c));
  }
  return names;
}

ConfusionMatrix confusion_from_predictions(std::span<const int> truth,
                                           std::span<const int> predicted, int num_classes) {
  if (truth.size() != predicted.size()) {
    throw DimensionMismatch("confusion: truth and prediction counts differ");
  }
  ConfusionMatrix cm;
  cm.counts.setZero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 ||
        predicted[i] >= num_classes) {
      throw InvalidArgument("confusion: class index out of range at row " + std::to_string(i));
    }
    ++cm.counts(truth[i], predicted[i]);
  }
  cm.class_names = class_names(num_classes, -1);
  return cm;
}

ConfusionMatrix confusion(const ClassifierHead& head, const data::Dataset& eval, bool fuse_at_eval) {
  std::vector<int> truth;
  truth.reserve(eval.labels.size());
  for (int label : eval.labels) {
    const int c = head.class_index(label);
    if (c < 0 || c >= head.num_classes()) {
      throw InvalidArgument("confusion: eval label " + std::to_string(label) +
                            " is not a class of the head");
    }
    truth.push_back(c);
  }
  const auto predicted = predict_classes(head, eval.embeddings, fuse_at_eval);
  ConfusionMatrix cm = confusion_from_predictions(truth, predicted, head.num_classes());
  cm.class_names = class_names(head.num_classes(), head.background_index);
  return cm;
}

double confusion_percentage(const ConfusionMatrix& cm) {
  const long long total = cm.total();
  if (total <= 0) throw EmptyMatrix("confusion_percentage: matrix has no counts");
  const long long diagonal = cm.counts.diagonal().sum();
  return 100.0 * static_cast<double>(total - diagonal) / static_cast<double>(total);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> out;
  for (Eigen::Index c = 0; c < cm.counts.rows(); ++c) {
    const long long row = cm.counts.row(c).sum();
    out.push_back(row > 0 ? static_cast<double>(cm.counts(c, c)) / static_cast<double>(row)
                          : std::numeric_limits<double>::quiet_NaN());
  }
  return out;
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto n = cm.counts.rows();
  auto name = [&](Eigen::Index c) {
    return static_cast<std::size_t>(c) < cm.class_names.size() ? cm.class_names[c]
                                                               : "c" + std::to_string(c);
  };
  out << "true\\pred";
  for (Eigen::Index c = 0; c < n; ++c) out << ',' << name(c);
  out << '\n';
  for (Eigen::Index r = 0; r < n; ++r) {
    out << name(r);
    for (Eigen::Index c = 0; c < n; ++c) out << ',' << cm.counts(r, c);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

ConfusionMatrix read_confusion_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    return fields;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header", 1);
  auto header = split(line);
  if (header.empty() || header[0] != "true\\pred") {
    throw ParseError(path.string() + ": bad confusion header", 1);
  }
  ConfusionMatrix cm;
  cm.class_names.assign(header.begin() + 1, header.end());
  const auto n = static_cast<Eigen::Index>(cm.class_names.size());
  cm.counts.setZero(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto line_no = static_cast<std::size_t>(r + 2);
    if (!std::getline(in, line)) throw ParseError(path.string() + ": missing row", line_no);
    auto fields = split(line);
    if (static_cast<Eigen::Index>(fields.size()) != n + 1) {
      throw ParseError(path.string() + ": wrong column count", line_no);
    }
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto& f = fields[static_cast<std::size_t>(c + 1)];
      long long v = 0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || v < 0) {
        throw ParseError(path.string() + ": bad count '" + f + "'", line_no);
      }
      cm.counts(r, c) = v;
    }
  }
  return cm;
}

ForgettingReport forgetting(double acc_before, double acc_after, double acc_novel) {
  if (!(acc_before > 0.0)) throw InvalidArgument("forgetting: accuracy before adaptation must be > 0");
  return ForgettingReport{acc_before, acc_after, acc_novel,
                          100.0 * (acc_before - acc_after) / acc_before};
}

ClusterStats cluster_stats(const Matrix& embeddings, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != embeddings.rows()) {
    throw DimensionMismatch("cluster_stats: label count differs from rows");
  }
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    members[labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  if (members.size() < 2) throw EmptyClass("cluster_stats: need at least two non-empty classes");

  ClusterStats stats;
  std::vector<Vector> centroids;
  for (const auto& [label, rows] : members) {
    Vector centroid = Vector::Zero(embeddings.cols());
    for (auto r : rows) centroid += embeddings.row(r).transpose();
    centroid /= static_cast<double>(rows.size());
    double spread = 0.0;
    for (auto r : rows) spread += (embeddings.row(r).transpose() - centroid).squaredNorm();
    stats.classes.push_back(label);
    stats.intra_variance.push_back(spread / static_cast<double>(rows.size()));
    centroids.push_back(std::move(centroid));
  }
  double min_angle = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centroids.size(); ++a) {
    for (std::size_t b = a + 1; b < centroids.size(); ++b) {
      if (!(centroids[a].norm() > kNormEpsilon) || !(centroids[b].norm() > kNormEpsilon)) {
        throw DegenerateNorm("cluster_stats: class centroid at the origin");
      }
      min_angle = std::min(min_angle, data::angle_deg(centroids[a], centroids[b]));
    }
  }
  stats.min_centroid_angle_deg = min_angle;
  return stats;
}

}  // namespace agcm::metrics
