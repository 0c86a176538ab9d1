#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ace/tensor/rng.hpp"
#include "ace/tensor/tensor.hpp"

ACE_NAMESPACE_BEGIN

enum class Init { kXavierUniform, kZeros, kOnes };

/// Named trainable tensors plus their Adam moment buffers.
/// Iteration order is registration order.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    std::vector<Real> m;
    std::vector<Real> v;
  };

  /// Registers a new parameter. Xavier-uniform treats the first axis as
  /// fan-in and the product of the rest as fan-out.
  Tensor create(const std::string& name, Shape shape, Init init, Rng& rng);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  std::int64_t step() const { return step_; }
  void set_step(std::int64_t step) { step_ = step; }
  void advance_step() { ++step_; }

  void zero_grad();
  /// Copies values (not moments) from another store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::int64_t step_ = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over every parameter, then zeroes the
/// gradients. Parameters that never received a gradient are treated as
/// having gradient zero.
void adam_step(ParameterStore& store, double lr, const AdamConfig& config = {});

enum class ScheduleMode { kInverseSqrt, kCosine };

struct ScheduleSpec {
  ScheduleMode mode = ScheduleMode::kInverseSqrt;
  double lr_init = 1e-6;
  double lr_peak = 1e-4;
  std::int64_t warmup_steps = 0;
  /// Cosine only: length of one annealing cycle after warmup; the cycle
  /// restarts at lr_peak when it elapses.
  std::int64_t period_steps = 1;
};

/// Linear warmup lr_init -> lr_peak over warmup_steps, then either
/// lr_peak * sqrt(W / step) or cosine decay back to lr_init.
/// With W = 0 the inverse-sqrt branch uses lr_peak / sqrt(max(step, 1)).
double lr_at_step(const ScheduleSpec& schedule, std::int64_t step);

ACE_NAMESPACE_END
