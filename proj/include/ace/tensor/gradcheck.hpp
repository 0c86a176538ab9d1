#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ace::gradcheck {

struct OpResult {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct SuiteResult {
  std::vector<OpResult> ops;
  double seconds = 0.0;
  bool passed = false;
};

struct SuiteOptions {
  std::size_t trials = 20;
  double step = 1e-3;
  double tolerance = 1e-4;
  /// Coordinates checked per input tensor; larger tensors are subsampled.
  std::size_t max_coords = 24;
};

/// Central finite differences against reverse-mode gradients in 64-bit
/// arithmetic, on randomized toy shapes. The error of one trial is
/// |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|) over all checked
/// coordinates (Euclidean norms); an op's error is the max over its trials.
SuiteResult run_gradient_suite(std::uint64_t seed, const SuiteOptions& options = {});

}  // namespace ace::gradcheck
