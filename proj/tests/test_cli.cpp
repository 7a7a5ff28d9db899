#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "agcm/experiment.hpp"

namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(dataset.d = 8
dataset.n_base = 3
dataset.n_novel = 2
dataset.samples_per_base = 30
dataset.k = 3
dataset.min_angle_deg = 30
dataset.confusable_pairs = 2:3:15
base.epochs = 5
base.batch_size = 16
adapt.epochs = 5
adapt.batch_size = 8
seeds = 1,2
jobs = 1
)";

struct Sandbox {
  fs::path dir;
  Sandbox() : dir(fs::temp_directory_path() / ("agcm_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "small.cfg") << kSmallConfig;
  }
  ~Sandbox() { fs::remove_all(dir); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(AGCM_CLI_PATH) + " " + args + " >" +
                            (dir / "stdout.txt").string() + " 2>" + (dir / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string read(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  std::string err() const { return read(dir / "stderr.txt"); }
  std::string out() const { return read(dir / "stdout.txt"); }
};

}  // namespace

TEST_CASE("run") {
  Sandbox s;
  const std::string cfg = (s.dir / "small.cfg").string();
  REQUIRE(s.run("run --config " + cfg + " --out " + (s.dir / "a").string()) == 0);
  const auto summary = agcm::experiment::read_summary_csv(s.dir / "a" / "summary.csv");
  CHECK(summary.seeds.size() == 2);
  const std::string text = s.read(s.dir / "a" / "summary.csv");
  CHECK(text.find("\nmean,") != std::string::npos);
  CHECK(text.find("\nstd,") != std::string::npos);
  for (const char* f : {"base_log.csv", "adapt_log.csv", "base_head.bin", "adapt_head.bin",
                        "confusion.csv"}) {
    CHECK(fs::exists(s.dir / "a" / "seed_1" / f));
  }
  CHECK(fs::exists(s.dir / "a" / "effective_config.txt"));
  CHECK(fs::exists(s.dir / "a" / "report.jsonl"));

  REQUIRE(s.run("run --config " + cfg + " --out " + (s.dir / "b").string()) == 0);
  CHECK(s.read(s.dir / "a" / "summary.csv") == s.read(s.dir / "b" / "summary.csv"));

  // Flag overrides land in the effective configuration.
  REQUIRE(s.run("run --config " + cfg + " --seed 4 --alpha 0.9 --margin 0.1 --metric pearson --out " +
                (s.dir / "c").string()) == 0);
  const std::string eff = s.read(s.dir / "c" / "effective_config.txt");
  CHECK(eff.find("adapt.alpha = 0.9") != std::string::npos);
  CHECK(eff.find("adapt.margin = 0.1") != std::string::npos);
  CHECK(eff.find("adapt.metric = pearson") != std::string::npos);
  CHECK(agcm::experiment::read_summary_csv(s.dir / "c" / "summary.csv").seeds.size() == 1);

  // report recomputes the stored evaluation from the checkpoint.
  REQUIRE(s.run("datagen --config " + cfg + " --seed 4 --out " + (s.dir / "data").string()) == 0);
  CHECK(fs::exists(s.dir / "data" / "eval.csv"));
  REQUIRE(s.run("report --head " + (s.dir / "c" / "seed_4" / "adapt_head.bin").string() +
                " --base-head " + (s.dir / "c" / "seed_4" / "base_head.bin").string() +
                " --num-base 3 --eval " + (s.dir / "data" / "eval.csv").string() + " --out " +
                (s.dir / "rep").string()) == 0);
  CHECK(s.read(s.dir / "rep" / "confusion.csv") == s.read(s.dir / "c" / "seed_4" / "confusion.csv"));
  CHECK(s.out().find("\"confusion_pct\"") != std::string::npos);
}

TEST_CASE("errors and exit codes") {
  Sandbox s;
  CHECK(s.run("run --config " + (s.dir / "missing.cfg").string()) == 1);
  CHECK(s.err().find("missing.cfg") != std::string::npos);
  std::ofstream(s.dir / "bad.cfg") << "dataset.d = 8\nnot.a.key = 3\n";
  CHECK(s.run("run --config " + (s.dir / "bad.cfg").string()) == 1);
  CHECK(s.err().find("line 2") != std::string::npos);
  CHECK(s.run("run --alpha 0.2 --config " + (s.dir / "small.cfg").string()) == 1);
  CHECK(s.run("frobnicate") == 1);
  CHECK(s.run("gradcheck --count 0") == 1);
  CHECK(s.run("report --head " + (s.dir / "nothing.bin").string() + " --eval x.csv") == 2);

  // Infeasible separation is a runtime error.
  std::ofstream(s.dir / "tight.cfg") << kSmallConfig
                                     << "dataset.d = 2\ndataset.min_angle_deg = 90\n"
                                        "dataset.confusable_pairs = none\n";
  CHECK(s.run("run --config " + (s.dir / "tight.cfg").string() + " --out " +
              (s.dir / "t").string()) == 2);
}

TEST_CASE("gradcheck") {
  Sandbox s;
  CHECK(s.run("gradcheck --count 5 --seed 3") == 0);
  CHECK(s.out().find("\"suite\"") != std::string::npos);
  CHECK(s.run("gradcheck --count 5 --seed 3 --inject-fault") == 3);
  CHECK(s.err().find("gradient check failed") != std::string::npos);
}

TEST_CASE("sweep with one cell matches run") {
  Sandbox s;
  const std::string cfg = (s.dir / "small.cfg").string();
  REQUIRE(s.run("sweep --config " + cfg + " --alphas 0.8 --margins 0.2 --metrics cosine --out " +
                (s.dir / "sw").string()) == 0);
  const std::string sweep_csv = s.read(s.dir / "sw" / "sweep.csv");
  CHECK(sweep_csv.rfind("parameter,value,", 0) == 0);
  REQUIRE(s.run("run --config " + cfg + " --out " + (s.dir / "r").string()) == 0);
  const auto run_summary = agcm::experiment::read_summary_csv(s.dir / "r" / "summary.csv");
  for (const char* cell : {"alpha=0.8", "distance=cosine", "m=0.2"}) {
    const auto cell_summary =
        agcm::experiment::read_summary_csv(s.dir / "sw" / "cells" / cell / "summary.csv");
    CHECK(cell_summary.aggregate.mean.novel_acc == run_summary.aggregate.mean.novel_acc);
    CHECK(cell_summary.aggregate.mean.base_acc_after == run_summary.aggregate.mean.base_acc_after);
  }
}
