#include "agcm/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "agcm/errors.hpp"

namespace agcm::experiment {

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs)
                                 : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

Aggregate aggregate(const std::vector<SeedResult>& rows) {
  Aggregate agg;
  const auto n = static_cast<double>(rows.size());
  auto fields = [](SeedResult& r) {
    return std::array<double*, 5>{&r.base_acc_before, &r.base_acc_after, &r.novel_acc,
                                  &r.forgetting_pct, &r.confusion_pct};
  };
  auto mean = fields(agg.mean);
  auto sd = fields(agg.stddev);
  for (std::size_t f = 0; f < mean.size(); ++f) {
    double sum = 0.0;
    for (auto r : rows) sum += *fields(r)[f];
    *mean[f] = rows.empty() ? std::numeric_limits<double>::quiet_NaN() : sum / n;
    double sq = 0.0;
    for (auto r : rows) sq += std::pow(*fields(r)[f] - *mean[f], 2);
    *sd[f] = rows.size() < 2 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(sq / (n - 1.0));
  }
  return agg;
}

namespace {

config::ExperimentConfig seeded(const config::ExperimentConfig& config, std::uint64_t seed) {
  config::ExperimentConfig c = config;
  c.dataset.seed = seed;
  c.base_stage.seed = seed;
  c.adapt_stage.seed = seed;
  return c;
}

std::string format_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SeedBase prepare_seed(const config::ExperimentConfig& config, std::uint64_t seed) {
  const auto c = seeded(config, seed);
  SeedBase base;
  base.seed = seed;
  base.data = data::generate(c.dataset);
  base.base = train::base_train(base.data.base, c.base_stage);
  return base;
}

SeedResult finish_seed(const config::ExperimentConfig& config, const SeedBase& base,
                       const std::optional<std::filesystem::path>& seed_dir) {
  const auto c = seeded(config, base.seed);
  const auto& eval = base.data.eval;
  const int n_base = c.dataset.n_base;
  const train::TrainResult adapted =
      train::few_shot_adapt(base.base.head, base.data.kshot, c.adapt_stage);

  SeedResult r;
  r.seed = base.seed;
  r.base_acc_before = train::group_accuracy(base.base.head, eval, 0, n_base);
  r.base_acc_after = train::group_accuracy(adapted.head, eval, 0, n_base);
  r.novel_acc = train::group_accuracy(adapted.head, eval, n_base, c.dataset.num_classes());
  r.forgetting_pct = r.base_acc_before > 0.0
                         ? metrics::forgetting(r.base_acc_before, r.base_acc_after, r.novel_acc)
                               .percent_drop
                         : std::numeric_limits<double>::quiet_NaN();
  const auto cm = metrics::confusion(adapted.head, eval, c.fuse_at_eval);
  r.confusion_pct = metrics::confusion_percentage(cm);

  if (seed_dir) {
    std::filesystem::create_directories(*seed_dir);
    train::write_log_csv(base.base.log, *seed_dir / "base_log.csv");
    train::write_log_csv(adapted.log, *seed_dir / "adapt_log.csv");
    save_head(base.base.head, *seed_dir / "base_head.bin");
    save_head(adapted.head, *seed_dir / "adapt_head.bin");
    metrics::write_confusion_csv(cm, *seed_dir / "confusion.csv");
  }
  return r;
}

RunSummary run(const config::ExperimentConfig& config,
               const std::optional<std::filesystem::path>& out_dir,
               const std::vector<SeedBase>* bases) {
  config.validate();
  if (bases && bases->size() != config.seeds.size()) {
    throw InvalidArgument("run: precomputed bases do not match the seed list");
  }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream(*out_dir / "effective_config.txt", std::ios::trunc) << config::to_text(config);
  }
  RunSummary summary;
  summary.seeds.resize(config.seeds.size());
  parallel_for(config.seeds.size(), config.jobs, [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    std::optional<std::filesystem::path> seed_dir;
    if (out_dir) seed_dir = *out_dir / ("seed_" + std::to_string(seed));
    if (bases) {
      summary.seeds[i] = finish_seed(config, (*bases)[i], seed_dir);
    } else {
      summary.seeds[i] = finish_seed(config, prepare_seed(config, seed), seed_dir);
    }
  });
  summary.aggregate = aggregate(summary.seeds);
  if (out_dir) {
    write_summary_csv(summary, *out_dir / "summary.csv");
    std::ofstream jsonl(*out_dir / "report.jsonl", std::ios::trunc);
    for (const auto& r : summary.seeds) jsonl << to_json_line(r, "seed") << '\n';
    jsonl << to_json_line(summary.aggregate.mean, "mean") << '\n';
    jsonl << to_json_line(summary.aggregate.stddev, "std") << '\n';
  }
  return summary;
}

namespace {

constexpr const char* kSummaryHeader =
    "seed,base_acc_before,base_acc_after,novel_acc,forgetting_pct,confusion_pct";

void write_row(std::ostream& out, const std::string& key, const SeedResult& r) {
  out << key << ',' << format_value(r.base_acc_before) << ',' << format_value(r.base_acc_after)
      << ',' << format_value(r.novel_acc) << ',' << format_value(r.forgetting_pct) << ','
      << format_value(r.confusion_pct) << '\n';
}

double parse_value(const std::string& s, std::size_t line) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ParseError("bad number '" + s + "'", line);
  return v;
}

}  // namespace

void write_summary_csv(const RunSummary& summary, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kSummaryHeader << '\n';
  for (const auto& r : summary.seeds) write_row(out, std::to_string(r.seed), r);
  write_row(out, "mean", summary.aggregate.mean);
  write_row(out, "std", summary.aggregate.stddev);
  if (!out) throw IoError("write failed: " + path.string());
}

RunSummary read_summary_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader) {
    throw ParseError(path.string() + ": unexpected summary header", 1);
  }
  RunSummary summary;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string item; std::getline(ss, item, ',');) f.push_back(item);
    if (f.size() != 6) throw ParseError(path.string() + ": expected 6 columns", line_no);
    SeedResult r{0,
                 parse_value(f[1], line_no),
                 parse_value(f[2], line_no),
                 parse_value(f[3], line_no),
                 parse_value(f[4], line_no),
                 parse_value(f[5], line_no)};
    if (f[0] == "mean") {
      summary.aggregate.mean = r;
    } else if (f[0] == "std") {
      summary.aggregate.stddev = r;
    } else {
      r.seed = std::stoull(f[0]);
      summary.seeds.push_back(r);
    }
  }
  return summary;
}

std::vector<SweepCell> sweep_cells(const config::ExperimentConfig& config) {
  std::vector<SweepCell> cells;
  for (double alpha : config.sweep.alphas) {
    SweepCell cell{"alpha", config::format_double(alpha), config};
    cell.config.adapt_stage.fusion.alpha = alpha;
    cells.push_back(std::move(cell));
  }
  for (auto metric : config.sweep.metrics) {
    SweepCell cell{"distance", std::string(apf::to_string(metric)), config};
    cell.config.adapt_stage.fusion.metric = metric;
    cells.push_back(std::move(cell));
  }
  for (double m : config.sweep.margins) {
    SweepCell cell{"m", config::format_double(m), config};
    cell.config.adapt_stage.loss.margin = m;
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<SweepRow> sweep(const config::ExperimentConfig& config,
                            const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  // Cells only vary the adaptation stage, so data and base heads are shared.
  std::vector<SeedBase> bases(config.seeds.size());
  parallel_for(config.seeds.size(), config.jobs,
               [&](std::size_t i) { bases[i] = prepare_seed(config, config.seeds[i]); });

  const auto cells = sweep_cells(config);
  std::vector<SweepRow> rows(cells.size());
  parallel_for(cells.size(), config.jobs, [&](std::size_t i) {
    const auto& cell = cells[i];
    SweepRow& row = rows[i];
    row.parameter = cell.parameter;
    row.value = cell.value;
    try {
      auto cell_config = cell.config;
      cell_config.jobs = 1;
      std::optional<std::filesystem::path> cell_dir;
      if (out_dir) cell_dir = *out_dir / "cells" / (cell.parameter + "=" + cell.value);
      row.result = run(cell_config, cell_dir, &bases).aggregate;
      row.status = "ok";
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
    }
  });
  if (out_dir) write_sweep_csv(rows, *out_dir / "sweep.csv");
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "parameter,value,base_acc,novel_acc,forgetting_pct,confusion_pct,status\n";
  for (const auto& row : rows) {
    out << row.parameter << ',' << row.value << ',';
    if (row.result) {
      const auto& m = row.result->mean;
      out << format_value(m.base_acc_after) << ',' << format_value(m.novel_acc) << ','
          << format_value(m.forgetting_pct) << ',' << format_value(m.confusion_pct);
    } else {
      out << "nan,nan,nan,nan";
    }
    std::string status = row.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << ',' << status << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::string to_json_line(const SeedResult& r, const std::string& kind) {
  auto num = [](double v) -> nlohmann::json {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  nlohmann::json j;
  j["kind"] = kind;
  if (kind == "seed") j["seed"] = r.seed;
  j["base_acc_before"] = num(r.base_acc_before);
  j["base_acc_after"] = num(r.base_acc_after);
  j["novel_acc"] = num(r.novel_acc);
  j["forgetting_pct"] = num(r.forgetting_pct);
  j["confusion_pct"] = num(r.confusion_pct);
  return j.dump();
}

}  // namespace agcm::experiment
