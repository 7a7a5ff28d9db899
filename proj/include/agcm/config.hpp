#pragma once

// Experiment configuration: a flat "key = value" text format with dotted
// section prefixes. '#' starts a comment; blank lines are ignored.
//
//   dataset.d = 32            base.epochs = 200        adapt.alpha = 0.8
//   dataset.n_base = 7        base.batch_size = 64     adapt.metric = cosine
//   dataset.confusable_pairs = 6:7:12                  seeds = 1,2,3,4,5
//
// See README.md for the full key list.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "agcm/apf.hpp"
#include "agcm/synthdata.hpp"
#include "agcm/trainer.hpp"

namespace agcm::config {

struct SweepGrid {
  std::vector<double> alphas{0.5, 0.7, 0.8, 0.9, 1.0};
  std::vector<apf::Metric> metrics{apf::Metric::NegEuclidean, apf::Metric::Cosine,
                                   apf::Metric::Pearson};
  std::vector<double> margins{0.0, 0.1, 0.2, 0.4, 0.8, 1.0};

  void validate() const;
};

struct ExperimentConfig {
  data::DatasetSpec dataset;
  train::StageConfig base_stage = train::StageConfig::base_defaults();
  train::StageConfig adapt_stage = train::StageConfig::adapt_defaults();
  bool fuse_at_eval = false;
  std::string output_dir;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int jobs = 0;  // 0: hardware concurrency
  SweepGrid sweep;

  void validate() const;
};

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "AGCM_OUTPUT_ROOT";

ExperimentConfig default_config();

/// Applies one setting. Throws ConfigError on unknown keys or bad values.
void apply_setting(ExperimentConfig& config, std::string_view key, std::string_view value);

/// Parses text on top of `base`. Errors cite the line number.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base = default_config());
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ExperimentConfig& config);

/// Shortest decimal that round-trips.
std::string format_double(double value);

}  // namespace agcm::config
