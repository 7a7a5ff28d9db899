#pragma once

// Seeded finite-difference checks of every analytic gradient in the
// pipeline, shared by the command-line `gradcheck` and the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "agcm/diffcore.hpp"

namespace agcm::gradcheck {

struct SuiteResult {
  std::string name;
  int instances = 0;
  int failures = 0;
  double worst_relative_error = 0.0;
  int worst_instance = -1;
  Eigen::Index worst_coordinate = -1;
  double seconds = 0.0;

  bool passed() const { return failures == 0; }
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  int count = 100;
  diff::GradCheckOptions check;  // tolerance 1e-4
  // Test hook: perturbs every analytic gradient so the suites must fail.
  bool corrupt_gradients = false;
};

SuiteResult diffcore_suite(const SuiteOptions& options);
SuiteResult margin_loss_suite(const SuiteOptions& options);
SuiteResult apf_suite(const SuiteOptions& options, bool stop_attention_gradient);
SuiteResult head_suite(const SuiteOptions& options);

/// All of the above, in that order.
std::vector<SuiteResult> run_all(const SuiteOptions& options);

}  // namespace agcm::gradcheck
