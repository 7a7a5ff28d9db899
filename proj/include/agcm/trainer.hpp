#pragma once

// Two-stage protocol: plain cosine cross-entropy on abundant base classes,
// then K-shot adaptation over base + novel classes with fusion and the
// margin loss switched on.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "agcm/apf.hpp"
#include "agcm/head.hpp"
#include "agcm/margin_loss.hpp"
#include "agcm/synthdata.hpp"

namespace agcm::train {

enum class Stage { Base, Adapt };

struct StageConfig {
  Stage stage = Stage::Adapt;
  int epochs = 100;
  int batch_size = 16;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  apf::FusionConfig fusion;
  margin::MarginLossConfig loss;
  bool freeze_projection = true;
  // Width of the projected feature; 0 keeps the input width.
  int feature_dim = 0;

  static StageConfig base_defaults();
  static StageConfig adapt_defaults();
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;      // mean step loss over the epoch
  double base_acc = 0.0;  // training-set accuracy on base-class rows
  double novel_acc = 0.0; // training-set accuracy on novel-class rows; 0 when there are none
  double wall_ms = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  // Mechanism settings the stage actually trained with.
  double effective_alpha = 1.0;
  double effective_margin = 0.0;
};

struct TrainResult {
  ClassifierHead head;
  TrainLog log;
};

/// Seeded shuffle cut into contiguous chunks of batch_size (the last chunk
/// may be short). With `balanced`, every slot first picks a group (class or
/// background) uniformly at random and then takes that group's next row from
/// a shuffled pool that is refilled when exhausted. Dataset background
/// labels become `background_index`.
std::vector<apf::ProposalBatch> make_batches(const data::Dataset& dataset, int batch_size,
                                             std::uint64_t seed, bool balanced,
                                             int background_index);

/// Throws EmptyDataset, InvalidArgument for novel labels or a non-base
/// config.
TrainResult base_train(const data::Dataset& dataset, const StageConfig& config);

/// Adds one weight row per novel class (seeded random unit vectors) and
/// moves the background row to the end.
ClassifierHead expand_head(const ClassifierHead& head, int num_classes, std::uint64_t seed);

/// Throws ShotCountMismatch unless every class has exactly K rows.
TrainResult few_shot_adapt(const ClassifierHead& head, const data::Dataset& kshot,
                           const StageConfig& config);

/// Naive fine-tuning baseline: same expansion, batches, and optimizer as
/// few_shot_adapt, but the loss is a separately coded cosine-softmax
/// cross-entropy with neither fusion nor margin.
TrainResult naive_finetune(const ClassifierHead& head, const data::Dataset& kshot,
                           const StageConfig& config);

/// Fraction of rows with labels in [first, last) predicted correctly; 0 when
/// there are no such rows.
double group_accuracy(const ClassifierHead& head, const data::Dataset& dataset, int first,
                      int last);

/// Columns: epoch,loss,base_acc,novel_acc,wall_ms.
void write_log_csv(const TrainLog& log, const std::filesystem::path& path);
TrainLog read_log_csv(const std::filesystem::path& path);

}  // namespace agcm::train
