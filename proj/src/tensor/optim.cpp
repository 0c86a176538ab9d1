#include "ace/tensor/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

ACE_NAMESPACE_BEGIN

Tensor ParameterStore::create(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (index_.count(name)) throw std::invalid_argument("ParameterStore: duplicate parameter name " + name);
  const std::size_t n = shape_numel(shape);
  std::vector<Real> data(n, Real(0));
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(data.begin(), data.end(), Real(1));
      break;
    case Init::kXavierUniform: {
      const double fan_in = static_cast<double>(shape.front());
      const double fan_out = static_cast<double>(n) / fan_in;
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (Real& x : data) x = static_cast<Real>(rng.uniform(-bound, bound));
      break;
    }
  }
  Tensor value(std::move(shape), std::move(data), true);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, value, std::vector<Real>(n, Real(0)), std::vector<Real>(n, Real(0))});
  return value;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParameterStore: no parameter named " + name);
  return entries_[it->second].value;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& e : entries_) {
    const Tensor src = other.get(e.name);
    if (src.shape() != e.value.shape()) throw std::invalid_argument("ParameterStore: shape mismatch for " + e.name);
    std::copy(src.data().begin(), src.data().end(), e.value.mutable_data().begin());
  }
}

void adam_step(ParameterStore& store, double lr, const AdamConfig& config) {
  if (!(lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive, got " + std::to_string(lr));
  store.advance_step();
  const double t = static_cast<double>(store.step());
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (auto& entry : store.entries()) {
    auto w = entry.value.mutable_data();
    auto g = entry.value.grad();
    const std::vector<Real> zeros(g.empty() ? w.size() : 0, Real(0));
    const Real* gp = g.empty() ? zeros.data() : g.data();
    Real* mp = entry.m.data();
    Real* vp = entry.v.data();
    Real* wp = w.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double grad = static_cast<double>(gp[i]);
      const double m = config.beta1 * mp[i] + (1.0 - config.beta1) * grad;
      const double v = config.beta2 * vp[i] + (1.0 - config.beta2) * grad * grad;
      mp[i] = static_cast<Real>(m);
      vp[i] = static_cast<Real>(v);
      const double m_hat = m / correction1;
      const double v_hat = v / correction2;
      wp[i] = static_cast<Real>(wp[i] - lr * m_hat / (std::sqrt(v_hat) + config.eps));
    }
    entry.value.zero_grad();
  }
}

double lr_at_step(const ScheduleSpec& schedule, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lr_at_step: negative step");
  const std::int64_t warmup = schedule.warmup_steps;
  if (step < warmup) {
    const double frac = static_cast<double>(step) / static_cast<double>(warmup);
    return schedule.lr_init + (schedule.lr_peak - schedule.lr_init) * frac;
  }
  switch (schedule.mode) {
    case ScheduleMode::kInverseSqrt: {
      if (warmup == 0) return schedule.lr_peak / std::sqrt(static_cast<double>(std::max<std::int64_t>(step, 1)));
      return schedule.lr_peak * std::sqrt(static_cast<double>(warmup) / static_cast<double>(step));
    }
    case ScheduleMode::kCosine: {
      const std::int64_t period = std::max<std::int64_t>(schedule.period_steps, 1);
      const double t = static_cast<double>((step - warmup) % period) / static_cast<double>(period);
      return schedule.lr_init + (schedule.lr_peak - schedule.lr_init) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
  }
  return schedule.lr_peak;
}

ACE_NAMESPACE_END
