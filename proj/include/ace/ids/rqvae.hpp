#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ace/data/matrix.hpp"
#include "ace/tensor/ops.hpp"
#include "ace/tensor/optim.hpp"

ACE_NAMESPACE_BEGIN

/// Raised when a loss turns non-finite during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ids {

struct RqVaeConfig {
  std::vector<std::size_t> hidden{512, 256, 128};
  std::size_t latent_dim = 64;
  std::size_t n_codebooks = 2;
  std::size_t codebook_size = 16;
  double alpha = 1.0;
  double beta = 0.25;
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double lr_init = 1e-6;
  double lr_peak = 1e-3;
  /// Warmup length as a fraction of all optimizer steps.
  double warmup_fraction = 0.1;
  std::size_t dead_restart_steps = 50;
};

struct RqVaeLosses {
  double recon = 0.0;
  double commit = 0.0;
  double total = 0.0;
};

struct Quantized {
  std::vector<int> indices;
  std::vector<Real> z;
  std::vector<Real> z_hat;
  /// residual after the last level, r_M
  std::vector<Real> residual;
};

struct CodebookUsage {
  std::vector<std::vector<std::size_t>> counts;
  std::vector<std::size_t> dead;
};

class RqVae {
 public:
  RqVae(std::size_t input_dim, const RqVaeConfig& config, std::uint64_t seed);

  const RqVaeConfig& config() const { return config_; }
  std::size_t input_dim() const { return input_dim_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  Tensor codebook(std::size_t level) const;

  Tensor encode(const Tensor& x) const;
  Tensor decode(const Tensor& z) const;

  /// Nearest entry of one level, ties to the lowest index.
  int nearest_entry(std::size_t level, std::span<const Real> r) const;
  Quantized quantize_latent(std::span<const Real> z) const;
  Quantized quantize(std::span<const float> x) const;
  std::vector<std::vector<int>> quantize_all(const Matrix& x) const;

  /// Differentiable loss on a batch: L_recon + alpha * L_commit.
  /// Both terms are summed over dimensions and averaged over the batch.
  Tensor loss(const Tensor& x, RqVaeLosses* parts = nullptr, std::vector<std::vector<int>>* indices = nullptr,
              std::vector<Tensor>* level_residuals = nullptr) const;
  RqVaeLosses evaluate(const Matrix& x) const;

  /// Level m starts from N samples of the level-(m-1) residuals of `sample`.
  void init_codebooks(const Matrix& sample, Rng& rng);
  bool codebooks_initialized() const { return initialized_; }

  RqVaeLosses train_step(const Matrix& batch, double lr, std::size_t batch_index);

  CodebookUsage usage(const Matrix& x) const;
  std::size_t restarts() const { return restarts_; }

 private:
  RqVaeConfig config_;
  std::size_t input_dim_;
  ParameterStore params_;
  Rng rng_;
  bool initialized_ = false;
  std::vector<std::vector<std::int64_t>> last_used_;
  std::size_t restarts_ = 0;
  std::int64_t steps_ = 0;
};

struct RqVaeEpoch {
  std::size_t epoch = 0;
  RqVaeLosses train;
  double lr = 0.0;
};

/// Shuffled mini-batch training for config.epochs epochs.
std::vector<RqVaeEpoch> train_rqvae(RqVae& model, const Matrix& data, std::uint64_t seed);

CodebookUsage codebook_usage_stats(const RqVae& model, const Matrix& residuals);

Tensor matrix_to_tensor(const Matrix& m);
Tensor matrix_rows_to_tensor(const Matrix& m, std::span<const std::size_t> rows);

}  // namespace ids
ACE_NAMESPACE_END
