// agcm: experiment runner for the attentive-fusion / cosine-margin head.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error,
// 3 gradient check failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agcm/config.hpp"
#include "agcm/errors.hpp"
#include "agcm/experiment.hpp"
#include "agcm/gradient_suite.hpp"
#include "agcm/metrics.hpp"

namespace fs = std::filesystem;
using namespace agcm;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitGradient = 3;

struct Overrides {
  std::string config_path;
  std::string out;
  std::string seeds;
  std::optional<double> alpha, margin, beta;
  std::string metric;
  std::optional<int> k, jobs;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key = value configuration file");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--seed", seeds, "seed or comma-separated seed list");
    cmd->add_option("--alpha", alpha, "fusion alpha in [0.5, 1]");
    cmd->add_option("--margin", margin, "cosine margin m");
    cmd->add_option("--beta", beta, "logit scale");
    cmd->add_option("--metric", metric, "attention metric: cosine, euclidean, pearson");
    cmd->add_option("--k", k, "shots per class");
    cmd->add_option("--jobs", jobs, "worker threads (0: all cores)");
  }

  config::ExperimentConfig resolve(const char* subcommand) const {
    config::ExperimentConfig c =
        config_path.empty() ? config::default_config() : config::load_config(config_path);
    if (!seeds.empty()) config::apply_setting(c, "seeds", seeds);
    if (alpha) c.adapt_stage.fusion.alpha = *alpha;
    if (margin) c.adapt_stage.loss.margin = *margin;
    if (beta) {
      c.base_stage.loss.beta = *beta;
      c.adapt_stage.loss.beta = *beta;
    }
    if (!metric.empty()) config::apply_setting(c, "adapt.metric", metric);
    if (k) c.dataset.k = *k;
    if (jobs) c.jobs = *jobs;
    if (!out.empty()) {
      c.output_dir = out;
    } else if (c.output_dir.empty()) {
      const char* root = std::getenv(config::kOutputRootEnv);
      c.output_dir = (fs::path(root && *root ? root : "agcm_out") / subcommand).string();
    }
    c.validate();
    return c;
  }
};

int cmd_run(const Overrides& o) {
  const auto c = o.resolve("run");
  const auto summary = experiment::run(c, fs::path(c.output_dir));
  std::cout << experiment::to_json_line(summary.aggregate.mean, "mean") << '\n';
  std::cerr << "wrote " << (fs::path(c.output_dir) / "summary.csv").string() << '\n';
  return 0;
}

int cmd_sweep(const Overrides& o, const std::string& alphas, const std::string& margins,
              const std::string& metrics) {
  auto c = o.resolve("sweep");
  if (!alphas.empty()) config::apply_setting(c, "sweep.alphas", alphas);
  if (!margins.empty()) config::apply_setting(c, "sweep.margins", margins);
  if (!metrics.empty()) config::apply_setting(c, "sweep.metrics", metrics);
  c.validate();
  fs::create_directories(c.output_dir);
  std::ofstream(fs::path(c.output_dir) / "effective_config.txt") << config::to_text(c);
  const auto rows = experiment::sweep(c, fs::path(c.output_dir));
  int failed = 0;
  for (const auto& row : rows) {
    if (row.status != "ok") {
      ++failed;
      std::cerr << "cell " << row.parameter << '=' << row.value << " failed: " << row.status << '\n';
    }
  }
  std::cerr << "wrote " << (fs::path(c.output_dir) / "sweep.csv").string() << " (" << rows.size()
            << " cells, " << failed << " failed)\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int count, bool inject_fault) {
  if (count < 1) throw ConfigError("--count must be >= 1");
  gradcheck::SuiteOptions options;
  options.seed = seed;
  options.count = count;
  options.corrupt_gradients = inject_fault;
  bool ok = true;
  for (const auto& r : gradcheck::run_all(options)) {
    nlohmann::json j{{"suite", r.name},
                     {"instances", r.instances},
                     {"failures", r.failures},
                     {"worst_relative_error", r.worst_relative_error},
                     {"worst_instance", r.worst_instance},
                     {"worst_coordinate", r.worst_coordinate},
                     {"tolerance", options.check.tolerance},
                     {"seconds", r.seconds}};
    std::cout << j.dump() << '\n';
    if (!r.passed()) {
      ok = false;
      std::cerr << "gradient check failed: suite " << r.name << ", instance " << r.worst_instance
                << ", coordinate " << r.worst_coordinate << ", relative error "
                << r.worst_relative_error << '\n';
    }
  }
  return ok ? 0 : kExitGradient;
}

int cmd_datagen(const Overrides& o) {
  auto c = o.resolve("datagen");
  if (!o.seeds.empty()) c.dataset.seed = c.seeds.front();
  const auto generated = data::generate(c.dataset);
  const fs::path out(c.output_dir);
  fs::create_directories(out);
  data::save_csv(generated.base, out / "base.csv");
  data::save_csv(generated.kshot, out / "kshot.csv");
  data::save_csv(generated.eval, out / "eval.csv");
  std::ofstream(out / "effective_config.txt") << config::to_text(c);
  std::cerr << "wrote base.csv, kshot.csv, eval.csv to " << out.string() << '\n';
  return 0;
}

int cmd_report(const std::string& head_path, const std::string& eval_path,
               const std::string& base_head_path, int num_base, const std::string& out,
               bool fuse) {
  const auto head = load_head(head_path);
  const auto eval = data::load_csv(eval_path, data::Split::Eval, head.num_classes() - 1);
  const int n_base = num_base > 0 ? num_base : head.num_classes() - 1;
  const auto cm = metrics::confusion(head, eval, fuse);
  nlohmann::json j{{"kind", "report"},
                   {"confusion_pct", metrics::confusion_percentage(cm)},
                   {"base_acc", train::group_accuracy(head, eval, 0, n_base)},
                   {"novel_acc", train::group_accuracy(head, eval, n_base, eval.num_classes)}};
  if (!base_head_path.empty()) {
    const auto base_head = load_head(base_head_path);
    const double before = train::group_accuracy(base_head, eval, 0, n_base);
    j["base_acc_before"] = before;
    if (before > 0.0) {
      j["forgetting_pct"] =
          metrics::forgetting(before, j["base_acc"].get<double>(), j["novel_acc"].get<double>())
              .percent_drop;
    }
  }
  std::cout << j.dump() << '\n';
  if (!out.empty()) {
    fs::create_directories(out);
    metrics::write_confusion_csv(cm, fs::path(out) / "confusion.csv");
    std::ofstream(fs::path(out) / "report.jsonl") << j.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attentive proposal fusion + cosine margin few-shot experiments"};
  app.require_subcommand(1);

  Overrides run_opts, sweep_opts, datagen_opts;
  auto* run = app.add_subcommand("run", "base-train, adapt and evaluate for every seed");
  run_opts.add_to(run);

  auto* sweep = app.add_subcommand("sweep", "one-parameter-at-a-time ablation over alpha, distance, m");
  sweep_opts.add_to(sweep);
  std::string alphas, margins, metrics;
  sweep->add_option("--alphas", alphas, "comma-separated alpha values");
  sweep->add_option("--margins", margins, "comma-separated margin values");
  sweep->add_option("--metrics", metrics, "comma-separated metrics");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::uint64_t grad_seed = 0;
  int grad_count = 100;
  bool inject_fault = false;
  grad->add_option("--seed", grad_seed, "suite seed");
  grad->add_option("--count", grad_count, "instances per suite");
  grad->add_flag("--inject-fault", inject_fault, "corrupt analytic gradients (negative control)");

  auto* datagen = app.add_subcommand("datagen", "write base/kshot/eval CSV splits");
  datagen_opts.add_to(datagen);

  auto* report = app.add_subcommand("report", "recompute metrics from a saved head checkpoint");
  std::string head_path, eval_path, base_head_path, report_out;
  int num_base = 0;
  bool fuse = false;
  report->add_option("--head", head_path, "adapted head checkpoint")->required();
  report->add_option("--eval", eval_path, "evaluation CSV")->required();
  report->add_option("--base-head", base_head_path, "base head checkpoint for forgetting");
  report->add_option("--num-base", num_base, "number of base classes (default: all non-background)");
  report->add_option("--out", report_out, "directory for confusion.csv and report.jsonl");
  report->add_flag("--fuse", fuse, "fuse evaluation rows before scoring");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, alphas, margins, metrics);
    if (*grad) return cmd_gradcheck(grad_seed, grad_count, inject_fault);
    if (*datagen) return cmd_datagen(datagen_opts);
    if (*report) return cmd_report(head_path, eval_path, base_head_path, num_base, report_out, fuse);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
