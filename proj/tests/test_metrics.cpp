#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>

#include <unistd.h>

#include "agcm/errors.hpp"
#include "agcm/metrics.hpp"
#include "test_util.hpp"

using namespace agcm;
using namespace agcm::metrics;

TEST_CASE("confusion_percentage") {
  const std::vector<int> truth{0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> pred{0, 0, 0, 1, 1, 1, 1, 0};
  const ConfusionMatrix cm = confusion_from_predictions(truth, pred, 2);
  CHECK(cm.counts(0, 0) == 3);
  CHECK(cm.counts(0, 1) == 1);
  CHECK(confusion_percentage(cm) == 25.0);

  CHECK(confusion_percentage(confusion_from_predictions(truth, truth, 2)) == 0.0);
  const std::vector<int> flipped{1, 1, 1, 1, 0, 0, 0, 0};
  CHECK(confusion_percentage(confusion_from_predictions(truth, flipped, 2)) == 100.0);

  ConfusionMatrix empty = confusion_from_predictions({}, {}, 3);
  CHECK_THROWS_AS(confusion_percentage(empty), EmptyMatrix);
  CHECK_THROWS_AS(confusion_from_predictions(truth, std::vector<int>{0}, 2), DimensionMismatch);
}

TEST_CASE("confusion_percentage is zero exactly for diagonal matrices") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = testing::uniform_int(rng, 2, 5);
    ConfusionMatrix cm;
    cm.counts.setZero(n, n);
    for (int i = 0; i < n; ++i) cm.counts(i, i) = testing::uniform_int(rng, 1, 9);
    const bool off = trial % 2 == 1;
    if (off) {
      const int r = testing::uniform_int(rng, 0, n - 1);
      cm.counts(r, (r + 1) % n) += testing::uniform_int(rng, 1, 3);
    }
    CHECK((confusion_percentage(cm) == 0.0) == !off);
  }
}

TEST_CASE("confusion over a head") {
  data::DatasetSpec s;
  s.d = 16;
  s.n_base = 4;
  s.n_novel = 0;
  s.samples_per_base = 10;
  s.k = 2;
  s.intra_sigma = 0.05;
  s.min_angle_deg = 60.0;
  s.confusable_pairs.clear();
  s.seed = 77;
  const auto g = data::generate(s);

  // Oracle head: weights are the class means, background gets the mean of the background rows.
  ClassifierHead h = make_head(16, 16, 5, 1);
  h.projection = Matrix::Identity(16, 16);
  h.class_weights.topRows(4) = g.class_means;
  const ConfusionMatrix cm = confusion(h, g.eval);
  CHECK(cm.counts.rows() == 5);
  CHECK(cm.class_names == std::vector<std::string>{"c0", "c1", "c2", "c3", "background"});
  for (int c = 0; c < 4; ++c) {
    CHECK(cm.counts.row(c).sum() == data::kEvalPerClass);
    CHECK(cm.counts(c, c) >= 99);
  }
  CHECK(cm.counts.row(4).sum() == std::count(g.eval.labels.begin(), g.eval.labels.end(), -1));
  CHECK(cm.total() == g.eval.size());

  // A head whose every class weight is equal predicts class 0 everywhere.
  ClassifierHead constant = h;
  constant.class_weights.rowwise() = h.class_weights.row(0);
  const ConfusionMatrix zero = confusion(constant, g.eval);
  CHECK(zero.counts.col(0).sum() == g.eval.size());
  CHECK(zero.counts.rightCols(4).sum() == 0);
}

TEST_CASE("forgetting") {
  const auto agcm_row = forgetting(63.4, 51.5, 58.0);
  CHECK(std::abs(agcm_row.percent_drop - 18.8) < 0.05);
  CHECK(agcm_row.acc_novel_after == 58.0);
  CHECK(std::abs(forgetting(63.4, 47.8, 0.0).percent_drop - 24.6) < 0.05);
  CHECK(std::abs(forgetting(63.4, 45.5, 0.0).percent_drop - 28.2) < 0.05);
  CHECK(forgetting(0.7, 0.7, 0.1).percent_drop == 0.0);
  CHECK_THROWS_AS(forgetting(0.0, 0.5, 0.5), InvalidArgument);
  CHECK_THROWS_AS(forgetting(-1.0, 0.5, 0.5), InvalidArgument);
}

TEST_CASE("cluster_stats") {
  Matrix at_centroids(4, 3);
  at_centroids << 1, 0, 0, 1, 0, 0, 0, 2, 0, 0, 2, 0;
  const std::vector<int> labels{0, 0, 1, 1};
  const ClusterStats s = cluster_stats(at_centroids, labels);
  CHECK(s.intra_variance == std::vector<double>{0.0, 0.0});
  CHECK(s.min_centroid_angle_deg == doctest::Approx(90.0));

  Matrix singletons(2, 2);
  singletons << 1, 0, 0, 1;
  CHECK(cluster_stats(singletons, std::vector<int>{3, 5}).min_centroid_angle_deg ==
        doctest::Approx(90.0));
  CHECK_THROWS_AS(cluster_stats(singletons, std::vector<int>{1, 1}), EmptyClass);

  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = testing::uniform_int(rng, 2, 5);
    const int m = testing::uniform_int(rng, n, 40);
    const Matrix x = testing::gaussian(rng, m, 4).array() + 2.0;
    std::vector<int> y = testing::random_labels(rng, m, n);
    for (int c = 0; c < n; ++c) y[static_cast<std::size_t>(c)] = c;
    const ClusterStats got = cluster_stats(x, y);
    REQUIRE(static_cast<int>(got.classes.size()) == n);
    // Brute force: E||x||^2 - ||E x||^2 in long double, angles via acos.
    std::vector<std::vector<long double>> centroid(static_cast<std::size_t>(n),
                                                   std::vector<long double>(4, 0.0L));
    for (int c = 0; c < n; ++c) {
      long double sq = 0.0L;
      int count = 0;
      for (int i = 0; i < m; ++i) {
        if (y[static_cast<std::size_t>(i)] != c) continue;
        ++count;
        for (int j = 0; j < 4; ++j) {
          sq += static_cast<long double>(x(i, j)) * x(i, j);
          centroid[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] += x(i, j);
        }
      }
      long double norm2 = 0.0L;
      for (auto& v : centroid[static_cast<std::size_t>(c)]) {
        v /= count;
        norm2 += v * v;
      }
      const long double var = sq / count - norm2;
      CHECK(std::abs(static_cast<double>(var) - got.intra_variance[static_cast<std::size_t>(c)]) <
            1e-10);
    }
    long double best = 1e9L;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        long double dot = 0.0L, na = 0.0L, nb = 0.0L;
        for (int j = 0; j < 4; ++j) {
          const auto u = centroid[static_cast<std::size_t>(a)][static_cast<std::size_t>(j)];
          const auto v = centroid[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
          dot += u * v;
          na += u * u;
          nb += v * v;
        }
        best = std::min(best, std::acos(dot / std::sqrt(na * nb)) * 180.0L / std::numbers::pi_v<long double>);
      }
    }
    CHECK(std::abs(static_cast<double>(best) - got.min_centroid_angle_deg) < 1e-10);
  }
}

TEST_CASE("confusion csv round-trip") {
  ConfusionMatrix cm;
  cm.counts.resize(3, 3);
  cm.counts << 5, 1, 0, 2, 7, 3, 0, 0, 9;
  cm.class_names = class_names(3, 2);
  const auto path = std::filesystem::temp_directory_path() /
                    ("agcm_cm_" + std::to_string(::getpid()) + ".csv");
  write_confusion_csv(cm, path);
  const ConfusionMatrix back = read_confusion_csv(path);
  CHECK(back.counts == cm.counts);
  CHECK(back.class_names == cm.class_names);
  std::filesystem::remove(path);

  const auto acc = per_class_accuracy(cm);
  CHECK(acc[0] == doctest::Approx(5.0 / 6.0));
  CHECK(acc[2] == 1.0);
}
