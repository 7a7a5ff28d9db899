#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>

#include <unistd.h>

#include "agcm/errors.hpp"
#include "agcm/trainer.hpp"

using namespace agcm;
using namespace agcm::train;

namespace {

data::Dataset labelled(const Matrix& x, std::vector<int> labels, int num_classes, int num_base,
                       data::Split split) {
  data::Dataset ds;
  ds.embeddings = x;
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  ds.num_base = num_base;
  ds.split = split;
  return ds;
}

data::DatasetSpec small_spec(std::uint64_t seed) {
  data::DatasetSpec s;
  s.d = 8;
  s.n_base = 3;
  s.n_novel = 2;
  s.samples_per_base = 40;
  s.k = 4;
  s.min_angle_deg = 40.0;
  s.intra_sigma = 0.1;
  s.confusable_pairs.clear();
  s.seed = seed;
  return s;
}

StageConfig base_config(std::uint64_t seed) {
  StageConfig c = StageConfig::base_defaults();
  c.epochs = 20;
  c.batch_size = 16;
  c.seed = seed;
  return c;
}

bool same_params(const ClassifierHead& a, const ClassifierHead& b) {
  return a.projection == b.projection && a.bias == b.bias && a.class_weights == b.class_weights;
}

}  // namespace

TEST_CASE("make_batches chunking and determinism") {
  const data::Dataset ds = labelled(Matrix::Random(10, 3), {0, 1, 0, 1, 0, 1, 0, 1, 0, -1}, 2, 2,
                                    data::Split::Base);
  const auto batches = make_batches(ds, 4, 7, false, 2);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);

  // Every row appears exactly once; background maps to the given index.
  std::map<double, int> seen;
  int background = 0;
  for (const auto& b : batches) {
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      ++seen[b.embeddings(i, 0)];
      if (b.labels[static_cast<std::size_t>(i)] == 2) ++background;
    }
  }
  CHECK(seen.size() == 10);
  CHECK(background == 1);

  const auto again = make_batches(ds, 4, 7, false, 2);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    CHECK(again[i].embeddings == batches[i].embeddings);
    CHECK(again[i].labels == batches[i].labels);
  }
  const auto balanced = make_batches(ds, 3, 7, true, 2);
  const auto balanced_again = make_batches(ds, 3, 7, true, 2);
  for (std::size_t i = 0; i < balanced.size(); ++i) {
    CHECK(balanced_again[i].embeddings == balanced[i].embeddings);
  }
  CHECK_THROWS_AS(make_batches(ds, 0, 7, false, 2), InvalidArgument);
}

TEST_CASE("balanced batches draw groups uniformly") {
  // Unequal group sizes: 6, 3, 2 labelled rows and 1 background row.
  const data::Dataset ds = labelled(Matrix::Random(12, 2), {0, 0, 0, 0, 0, 0, 1, 1, 1, 2, 2, -1},
                                    3, 3, data::Split::KShot);
  std::vector<double> counts(4, 0.0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    for (const auto& b : make_batches(ds, 4, seed, true, 3)) {
      for (int y : b.labels) counts[static_cast<std::size_t>(y)] += 1.0;
    }
  }
  const double total = counts[0] + counts[1] + counts[2] + counts[3];
  CHECK(total == 12000.0);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - total / 4) * (c - total / 4) / (total / 4);
  // 3 degrees of freedom; 16.27 is the 0.999 quantile.
  INFO("chi-square ", chi2);
  CHECK(chi2 < 16.27);
}

TEST_CASE("base_train on two separated classes") {
  data::DatasetSpec s = small_spec(21);
  s.n_base = 2;
  s.n_novel = 0;
  s.samples_per_base = 50;
  s.min_angle_deg = 60.0;
  const auto g = data::generate(s);
  StageConfig cfg = base_config(5);
  const TrainResult r = base_train(g.base, cfg);
  REQUIRE(r.log.epochs.size() == 20);
  CHECK(r.log.epochs.back().base_acc >= 0.95);
  CHECK(r.log.epochs.back().novel_acc == 0.0);
  CHECK(group_accuracy(r.head, g.base, 0, 2) >= 0.95);
  CHECK(r.head.num_classes() == 3);
  CHECK(r.head.background_index == 2);

  const TrainResult again = base_train(g.base, cfg);
  CHECK(same_params(r.head, again.head));
  CHECK(r.log.step_losses == again.log.step_losses);

  cfg.epochs = 0;
  CHECK_THROWS_AS(base_train(g.base, cfg), InvalidArgument);
  const auto with_novel = data::generate(small_spec(6));
  CHECK_THROWS_AS(base_train(with_novel.kshot, base_config(1)), InvalidArgument);
  data::Dataset empty = g.base.subset({});
  CHECK_THROWS_AS(base_train(empty, base_config(1)), EmptyDataset);
  StageConfig adapt = base_config(1);
  adapt.stage = Stage::Adapt;
  CHECK_THROWS_AS(base_train(g.base, adapt), InvalidArgument);
}

TEST_CASE("base_train never uses fusion or margin") {
  const auto g = data::generate(small_spec(3));
  StageConfig cfg = base_config(2);
  cfg.epochs = 2;
  cfg.fusion.alpha = 0.5;
  cfg.loss.margin = 0.4;
  const TrainResult r = base_train(g.base, cfg);
  CHECK(r.log.effective_alpha == 1.0);
  CHECK(r.log.effective_margin == 0.0);
  CHECK(r.head.fusion.alpha == 1.0);
  CHECK(r.head.loss.margin == 0.0);
}

TEST_CASE("few_shot_adapt expands the head") {
  data::DatasetSpec s = small_spec(4);
  s.n_base = 7;
  s.n_novel = 3;
  s.k = 10;
  s.d = 16;
  s.min_angle_deg = 25.0;
  const auto g = data::generate(s);
  StageConfig bc = base_config(4);
  bc.epochs = 2;
  const TrainResult base = base_train(g.base, bc);
  CHECK(base.head.class_weights.rows() == 8);

  StageConfig ac = StageConfig::adapt_defaults();
  ac.epochs = 2;
  ac.seed = 4;
  const TrainResult adapted = few_shot_adapt(base.head, g.kshot, ac);
  CHECK(adapted.head.class_weights.rows() == 11);
  CHECK(adapted.head.background_index == 10);
  CHECK(adapted.log.effective_alpha == 0.8);
  CHECK(adapted.log.effective_margin == 0.2);
  // Frozen projection.
  CHECK(adapted.head.projection == base.head.projection);

  const ClassifierHead expanded = expand_head(base.head, 11, 4);
  CHECK(expanded.class_weights.topRows(7) == base.head.class_weights.topRows(7));
  CHECK(expanded.class_weights.row(10) == base.head.class_weights.row(7));
  for (int c = 7; c < 10; ++c) CHECK(std::abs(expanded.class_weights.row(c).norm() - 1.0) < 1e-12);

  // One class short of K.
  std::vector<Eigen::Index> rows;
  bool dropped = false;
  for (Eigen::Index i = 0; i < g.kshot.size(); ++i) {
    if (!dropped && g.kshot.labels[static_cast<std::size_t>(i)] == 8) {
      dropped = true;
      continue;
    }
    rows.push_back(i);
  }
  CHECK_THROWS_AS(few_shot_adapt(base.head, g.kshot.subset(rows), ac), ShotCountMismatch);
}

TEST_CASE("adaptation with mechanisms off is naive fine-tuning") {
  const auto g = data::generate(small_spec(8));
  StageConfig bc = base_config(8);
  bc.epochs = 5;
  const TrainResult base = base_train(g.base, bc);
  StageConfig ac = StageConfig::adapt_defaults();
  ac.epochs = 10;
  ac.seed = 8;
  ac.learning_rate = 0.05;
  ac.fusion.alpha = 1.0;
  ac.loss.margin = 0.0;
  const TrainResult agcm = few_shot_adapt(base.head, g.kshot, ac);
  const TrainResult naive = naive_finetune(base.head, g.kshot, ac);
  REQUIRE(agcm.log.step_losses.size() == naive.log.step_losses.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < naive.log.step_losses.size(); ++i) {
    worst = std::max(worst, std::abs(agcm.log.step_losses[i] - naive.log.step_losses[i]));
  }
  CHECK(worst <= 1e-9);
  CHECK((agcm.head.class_weights - naive.head.class_weights).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("adaptation loss does not increase with a small learning rate") {
  // Linearly separable K-shot set: tight clusters, wide separation, no background.
  data::DatasetSpec s = small_spec(31);
  s.min_angle_deg = 60.0;
  s.intra_sigma = 0.05;
  s.background_rate = 0.0;
  const auto g = data::generate(s);
  StageConfig bc = base_config(31);
  bc.epochs = 5;
  const TrainResult base = base_train(g.base, bc);
  StageConfig ac = StageConfig::adapt_defaults();
  ac.seed = 31;
  ac.batch_size = 20;
  ac.learning_rate = 0.001;
  // Balanced batches differ in class mix from epoch to epoch, so the loss is
  // tracked on the whole K-shot set after each epoch. Training is
  // deterministic, so e epochs reproduce the first e epochs of a longer run.
  const apf::ProposalBatch all{g.kshot.embeddings, g.kshot.labels};
  double previous = std::numeric_limits<double>::infinity();
  for (int epochs = 1; epochs <= 15; ++epochs) {
    ac.epochs = epochs;
    const TrainResult r = few_shot_adapt(base.head, g.kshot, ac);
    const double loss = forward_train(r.head, all).loss;
    INFO("epochs ", epochs, " loss ", loss, " previous ", previous);
    CHECK(loss <= previous + 1e-12);
    previous = loss;
  }
}

TEST_CASE("train log csv round-trip") {
  TrainLog log;
  for (int e = 0; e < 4; ++e) {
    log.epochs.push_back({e, 1.0 / (e + 3.0), 0.1 * e, e == 0 ? 0.0 : 1.0 / 3.0, 12.5 + e});
  }
  const auto path = std::filesystem::temp_directory_path() /
                    ("agcm_log_" + std::to_string(::getpid()) + ".csv");
  write_log_csv(log, path);
  const TrainLog back = read_log_csv(path);
  REQUIRE(back.epochs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.epochs[i].epoch == log.epochs[i].epoch);
    CHECK(back.epochs[i].loss == log.epochs[i].loss);
    CHECK(back.epochs[i].base_acc == log.epochs[i].base_acc);
    CHECK(back.epochs[i].novel_acc == log.epochs[i].novel_acc);
    CHECK(back.epochs[i].wall_ms == log.epochs[i].wall_ms);
  }
  std::filesystem::remove(path);
}

TEST_CASE("stage config validation") {
  StageConfig c = StageConfig::adapt_defaults();
  CHECK_NOTHROW(c.validate());
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c.fusion.alpha = 1.0;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
