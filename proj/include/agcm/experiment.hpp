#pragma once

// Experiment drivers behind the command-line tool: per-seed two-stage runs,
// the one-parameter-at-a-time ablation sweep, and the gradient suites.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agcm/config.hpp"
#include "agcm/head.hpp"
#include "agcm/metrics.hpp"
#include "agcm/synthdata.hpp"
#include "agcm/trainer.hpp"

namespace agcm::experiment {

/// Runs fn(0..count-1) on up to `jobs` threads (0: hardware concurrency).
/// The first exception thrown by any task is rethrown after all finish.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

struct SeedResult {
  std::uint64_t seed = 0;
  double base_acc_before = 0.0;
  double base_acc_after = 0.0;
  double novel_acc = 0.0;
  double forgetting_pct = 0.0;
  double confusion_pct = 0.0;
};

struct Aggregate {
  SeedResult mean;
  SeedResult stddev;  // sample standard deviation; NaN with one seed
};

struct RunSummary {
  std::vector<SeedResult> seeds;
  Aggregate aggregate;
};

Aggregate aggregate(const std::vector<SeedResult>& rows);

/// Data and base-trained head for one seed; shared by every adaptation
/// that uses the same dataset and base stage.
struct SeedBase {
  std::uint64_t seed = 0;
  data::GeneratedData data;
  train::TrainResult base;
};

SeedBase prepare_seed(const config::ExperimentConfig& config, std::uint64_t seed);

/// Adapts the seed's base head, evaluates it, and writes per-seed artifacts
/// under `seed_dir` when given.
SeedResult finish_seed(const config::ExperimentConfig& config, const SeedBase& base,
                       const std::optional<std::filesystem::path>& seed_dir);

/// Every seed of the config; artifacts and summary.csv go to out_dir when
/// given. Precomputed bases (same order as config.seeds) skip base training.
RunSummary run(const config::ExperimentConfig& config,
               const std::optional<std::filesystem::path>& out_dir,
               const std::vector<SeedBase>* bases = nullptr);

/// Columns seed,base_acc_before,base_acc_after,novel_acc,forgetting_pct,
/// confusion_pct; one row per seed, then "mean" and "std" rows.
void write_summary_csv(const RunSummary& summary, const std::filesystem::path& path);
RunSummary read_summary_csv(const std::filesystem::path& path);

struct SweepCell {
  std::string parameter;  // "alpha", "distance" or "m"
  std::string value;
  config::ExperimentConfig config;
};

/// Varies one adaptation parameter at a time around the config's values.
std::vector<SweepCell> sweep_cells(const config::ExperimentConfig& config);

struct SweepRow {
  std::string parameter;
  std::string value;
  std::string status;  // "ok" or the error message
  std::optional<Aggregate> result;
};

/// Runs every cell; a failing cell is recorded and the rest continue. Cell
/// artifacts go under out_dir/cells/<parameter>=<value>.
std::vector<SweepRow> sweep(const config::ExperimentConfig& config,
                            const std::optional<std::filesystem::path>& out_dir);

/// Columns parameter,value,base_acc,novel_acc,forgetting_pct,confusion_pct,status.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

/// One JSON object per line.
std::string to_json_line(const SeedResult& r, const std::string& kind);

}  // namespace agcm::experiment
