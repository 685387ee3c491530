#pragma once

// Self-check suites shared by the command line and the acceptance runner.
// Each returns one result per check; `fault` corrupts weights on purpose so
// the suite must report failures.

#include <cstdint>
#include <string>
#include <vector>

namespace mlp3d {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct SuiteOptions {
  std::uint64_t seed = 0;
  bool fault = false;
};

// Efficient GTM vs. its dense (T*C) x (T*C) operator over every kind,
// S in {1,2,4}, T in {4,8}, C in {1,2,4}, H,W in {1,2}, shared and unshared,
// in f64 (1e-12) and f32 (1e-5); plus the permutation identities relating
// long_range and shift_window to short_range (exact).
std::vector<CheckResult> oracle_suite(const SuiteOptions& options = {});
std::vector<CheckResult> permutation_suite(const SuiteOptions& options = {});

// Central-difference gradient checks (f64, h = 1e-5, rel. tol 1e-4) of one
// full block per time-mixing kind and of a one-block-per-stage network.
std::vector<CheckResult> grad_suite(const SuiteOptions& options = {});

// center_init followed by a constant-in-time clip must give time-constant
// activations after every layer (max deviation 1e-6, f64).
std::vector<CheckResult> init_suite(const SuiteOptions& options = {});

bool all_passed(const std::vector<CheckResult>& results);
std::string format_result(const CheckResult& r);

}  // namespace mlp3d
