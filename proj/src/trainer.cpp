#include "agcm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "agcm/errors.hpp"

namespace agcm::train {

StageConfig StageConfig::base_defaults() {
  StageConfig c;
  c.stage = Stage::Base;
  c.epochs = 200;
  c.batch_size = 64;
  c.fusion.alpha = 1.0;
  c.loss.margin = 0.0;
  c.freeze_projection = false;
  return c;
}

StageConfig StageConfig::adapt_defaults() { return StageConfig{}; }

void StageConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("stage config: epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("stage config: batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("stage config: learning_rate must be finite and >= 0");
  }
  if (feature_dim < 0) throw InvalidArgument("stage config: feature_dim must be >= 0");
  fusion.validate();
  loss.validate();
  if (stage == Stage::Adapt && fusion.alpha < 1.0 && batch_size < 2) {
    throw InvalidArgument("stage config: fusion needs batch_size >= 2 when alpha < 1");
  }
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  return std::mt19937_64(seq);
}

apf::ProposalBatch gather(const data::Dataset& dataset, const std::vector<Eigen::Index>& rows,
                          std::size_t begin, std::size_t end, int background_index) {
  apf::ProposalBatch batch;
  batch.embeddings.resize(static_cast<Eigen::Index>(end - begin), dataset.dim());
  batch.labels.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    batch.embeddings.row(static_cast<Eigen::Index>(i - begin)) = dataset.embeddings.row(rows[i]);
    const int label = dataset.labels[static_cast<std::size_t>(rows[i])];
    batch.labels.push_back(label == kBackgroundLabel ? background_index : label);
  }
  return batch;
}

std::vector<Eigen::Index> balanced_order(const data::Dataset& dataset, std::mt19937_64& rng) {
  std::vector<std::vector<Eigen::Index>> groups(static_cast<std::size_t>(dataset.num_classes) + 1);
  for (std::size_t i = 0; i < dataset.labels.size(); ++i) {
    const int label = dataset.labels[i];
    const std::size_t g = label == kBackgroundLabel ? groups.size() - 1 : static_cast<std::size_t>(label);
    groups[g].push_back(static_cast<Eigen::Index>(i));
  }
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  std::vector<std::size_t> cursor(groups.size(), 0);
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);

  std::uniform_int_distribution<std::size_t> pick(0, groups.size() - 1);
  std::vector<Eigen::Index> order;
  order.reserve(dataset.labels.size());
  for (std::size_t slot = 0; slot < dataset.labels.size(); ++slot) {
    const std::size_t g = pick(rng);
    if (cursor[g] == groups[g].size()) {
      std::shuffle(groups[g].begin(), groups[g].end(), rng);
      cursor[g] = 0;
    }
    order.push_back(groups[g][cursor[g]++]);
  }
  return order;
}

using StepFn = std::function<TrainStep(const ClassifierHead&, const apf::ProposalBatch&)>;

TrainResult run_epochs(ClassifierHead head, const data::Dataset& dataset, const StageConfig& config,
                       bool balanced, const StepFn& step_fn) {
  TrainResult result;
  result.log.effective_alpha = head.fusion.alpha;
  result.log.effective_margin = head.loss.margin;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = make_batches(dataset, config.batch_size,
                                      config.seed + static_cast<std::uint64_t>(epoch) * 0x9e3779b97f4a7c15ull,
                                      balanced, head.background_index);
    double total = 0.0;
    for (const auto& batch : batches) {
      TrainStep step = step_fn(head, batch);
      if (config.freeze_projection) {
        step.gradients.projection.setZero();
        step.gradients.bias.setZero();
      }
      head = apply_gradients(head, step.gradients, config.learning_rate);
      result.log.step_losses.push_back(step.loss);
      total += step.loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = batches.empty() ? 0.0 : total / static_cast<double>(batches.size());
    rec.base_acc = group_accuracy(head, dataset, 0, dataset.num_base);
    rec.novel_acc = group_accuracy(head, dataset, dataset.num_base, dataset.num_classes);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                      .count();
    result.log.epochs.push_back(rec);
  }
  result.head = std::move(head);
  return result;
}

int infer_shots(const data::Dataset& kshot) {
  if (kshot.spec) return kshot.spec->k;
  for (int label : kshot.labels) {
    if (label >= 0) return kshot.class_counts()[static_cast<std::size_t>(label)];
  }
  return 0;
}

void check_kshot(const ClassifierHead& head, const data::Dataset& kshot) {
  if (kshot.size() == 0) throw EmptyDataset("few-shot dataset is empty");
  if (kshot.dim() != head.input_dim()) {
    throw DimensionMismatch("few-shot dataset dim differs from head input dim");
  }
  if (kshot.num_base != head.num_classes() - 1) {
    throw InvalidArgument("few-shot dataset declares " + std::to_string(kshot.num_base) +
                          " base classes, head was trained on " +
                          std::to_string(head.num_classes() - 1));
  }
  const int k = infer_shots(kshot);
  const auto counts = kshot.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] != k) {
      throw ShotCountMismatch("class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                              " samples, expected exactly K = " + std::to_string(k));
    }
  }
  for (int label : kshot.labels) {
    if (label != kBackgroundLabel && (label < 0 || label >= kshot.num_classes)) {
      throw InvalidArgument("few-shot dataset label " + std::to_string(label) + " out of range");
    }
  }
}

// Cosine-softmax cross-entropy over projected features, written without the
// fusion or margin modules.
TrainStep plain_cross_entropy_step(const ClassifierHead& head, const apf::ProposalBatch& batch,
                                   double beta) {
  const Eigen::Index m = batch.size();
  const Eigen::Index n = head.num_classes();
  const Matrix features = project(head, batch.embeddings);

  const Vector f_norm = features.rowwise().norm();
  const Vector w_norm = head.class_weights.rowwise().norm();
  const Matrix f_unit = f_norm.cwiseInverse().asDiagonal() * features;
  const Matrix w_unit = w_norm.cwiseInverse().asDiagonal() * head.class_weights;
  const Matrix logits = beta * (f_unit * w_unit.transpose()).cwiseMax(-1.0).cwiseMin(1.0);

  TrainStep step;
  Matrix d_logits(m, n);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double top = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - top).exp();
    const double z = e.sum();
    step.loss += (top + std::log(z) - logits(i, batch.labels[i])) / static_cast<double>(m);
    d_logits.row(i) = e / z;
    d_logits(i, batch.labels[i]) -= 1.0;
  }
  const Matrix d_cos = (beta / static_cast<double>(m)) * d_logits;
  const Matrix d_f_unit = d_cos * w_unit;
  const Matrix d_w_unit = d_cos.transpose() * f_unit;

  Matrix d_features(m, features.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    const double radial = f_unit.row(i).dot(d_f_unit.row(i));
    d_features.row(i) = (d_f_unit.row(i) - radial * f_unit.row(i)) / f_norm[i];
  }
  step.gradients.class_weights.resize(n, features.cols());
  for (Eigen::Index j = 0; j < n; ++j) {
    const double radial = w_unit.row(j).dot(d_w_unit.row(j));
    step.gradients.class_weights.row(j) = (d_w_unit.row(j) - radial * w_unit.row(j)) / w_norm[j];
  }
  step.gradients.projection = batch.embeddings.transpose() * d_features;
  step.gradients.bias = d_features.colwise().sum().transpose();
  return step;
}

}  // namespace

std::vector<apf::ProposalBatch> make_batches(const data::Dataset& dataset, int batch_size,
                                             std::uint64_t seed, bool balanced,
                                             int background_index) {
  if (batch_size < 1) throw InvalidArgument("make_batches: batch_size must be >= 1");
  std::mt19937_64 rng = epoch_rng(seed, 0);
  std::vector<Eigen::Index> order;
  if (balanced) {
    order = balanced_order(dataset, rng);
  } else {
    order.resize(dataset.labels.size());
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<apf::ProposalBatch> batches;
  const auto size = static_cast<std::size_t>(batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += size) {
    batches.push_back(
        gather(dataset, order, begin, std::min(order.size(), begin + size), background_index));
  }
  return batches;
}

TrainResult base_train(const data::Dataset& dataset, const StageConfig& config) {
  if (config.stage != Stage::Base) throw InvalidArgument("base_train: config is not a base stage");
  config.validate();
  if (dataset.size() == 0) throw EmptyDataset("base training dataset is empty");
  if (dataset.num_base < 1) throw InvalidArgument("base_train: dataset declares no base classes");
  for (int label : dataset.labels) {
    if (label != kBackgroundLabel && (label < 0 || label >= dataset.num_base)) {
      throw InvalidArgument("base_train: label " + std::to_string(label) +
                            " outside base range [0, " + std::to_string(dataset.num_base) + ")");
    }
  }
  data::Dataset base = dataset;
  base.num_classes = dataset.num_base;

  const Eigen::Index feat = config.feature_dim > 0 ? config.feature_dim : dataset.dim();
  ClassifierHead head = make_head(dataset.dim(), feat, dataset.num_base + 1, config.seed);
  // Base training is plain cross-entropy: no fusion and no margin.
  head.fusion = config.fusion;
  head.fusion.alpha = 1.0;
  head.loss = config.loss;
  head.loss.margin = 0.0;
  head.loss.background_index = head.background_index;
  return run_epochs(std::move(head), base, config, false, &forward_train);
}

ClassifierHead expand_head(const ClassifierHead& head, int num_classes, std::uint64_t seed) {
  head.validate();
  const int old_n = head.num_classes();
  if (num_classes < old_n) throw InvalidArgument("expand_head: cannot shrink the class set");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0xe7a9du};
  std::mt19937_64 rng(seq);
  ClassifierHead out = head;
  out.class_weights.resize(num_classes, head.feature_dim());
  int next = 0;
  for (int c = 0; c < old_n; ++c) {
    if (c != head.background_index) out.class_weights.row(next++) = head.class_weights.row(c);
  }
  for (; next < num_classes - 1; ++next) {
    out.class_weights.row(next) = random_unit_vector(head.feature_dim(), rng).transpose();
  }
  out.class_weights.row(num_classes - 1) = head.class_weights.row(head.background_index);
  out.background_index = num_classes - 1;
  out.loss.background_index = out.background_index;
  return out;
}

namespace {

ClassifierHead adapt_head(const ClassifierHead& head, const data::Dataset& kshot,
                          const StageConfig& config) {
  if (config.stage != Stage::Adapt) throw InvalidArgument("adapt: config is not an adapt stage");
  config.validate();
  check_kshot(head, kshot);
  ClassifierHead out = expand_head(head, kshot.num_classes + 1, config.seed);
  out.fusion = config.fusion;
  out.loss = config.loss;
  out.loss.background_index = out.background_index;
  return out;
}

}  // namespace

TrainResult few_shot_adapt(const ClassifierHead& head, const data::Dataset& kshot,
                           const StageConfig& config) {
  return run_epochs(adapt_head(head, kshot, config), kshot, config, true, &forward_train);
}

TrainResult naive_finetune(const ClassifierHead& head, const data::Dataset& kshot,
                           const StageConfig& config) {
  StageConfig plain = config;
  plain.fusion.alpha = 1.0;
  plain.loss.margin = 0.0;
  const double beta = plain.loss.beta;
  return run_epochs(adapt_head(head, kshot, plain), kshot, plain, true,
                    [beta](const ClassifierHead& h, const apf::ProposalBatch& b) {
                      apf::validate(b, h.num_classes());
                      return plain_cross_entropy_step(h, b, beta);
                    });
}

double group_accuracy(const ClassifierHead& head, const data::Dataset& dataset, int first,
                      int last) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < dataset.labels.size(); ++i) {
    const int label = dataset.labels[i];
    if (label >= first && label < last) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.empty()) return 0.0;
  const data::Dataset sub = dataset.subset(rows);
  const auto predicted = predict_classes(head, sub.embeddings);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == head.class_index(sub.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

void write_log_csv(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,loss,base_acc,novel_acc,wall_ms\n";
  char buf[160];
  for (const auto& r : log.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.3f\n", r.epoch, r.loss, r.base_acc,
                  r.novel_acc, r.wall_ms);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TrainLog read_log_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,loss,base_acc,novel_acc,wall_ms") {
    throw ParseError(path.string() + ": unexpected train log header", 1);
  }
  TrainLog log;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EpochRecord r;
    char tail = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf%c", &r.epoch, &r.loss, &r.base_acc,
                    &r.novel_acc, &r.wall_ms, &tail) != 5) {
      throw ParseError("malformed train log row", line_no);
    }
    if (!log.epochs.empty() && r.epoch <= log.epochs.back().epoch) {
      throw ParseError("epoch indices must increase", line_no);
    }
    log.epochs.push_back(r);
  }
  return log;
}

}  // namespace agcm::train
