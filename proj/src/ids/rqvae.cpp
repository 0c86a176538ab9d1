#include "ace/ids/rqvae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

ACE_NAMESPACE_BEGIN
namespace ids {

namespace {

std::string enc_name(std::size_t i, const char* what) { return "enc." + std::to_string(i) + "." + what; }
std::string dec_name(std::size_t i, const char* what) { return "dec." + std::to_string(i) + "." + what; }
std::string cb_name(std::size_t m) { return "codebook." + std::to_string(m); }

Tensor mlp(const ParameterStore& params, const Tensor& x, std::size_t layers, std::string (*name)(std::size_t, const char*)) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers; ++i) {
    h = add(matmul(h, params.get(name(i, "w"))), params.get(name(i, "b")));
    if (i + 1 < layers) h = elu(h);
  }
  return h;
}

}  // namespace

Tensor matrix_to_tensor(const Matrix& m) {
  return Tensor({m.rows, m.cols}, std::vector<Real>(m.values.begin(), m.values.end()));
}

Tensor matrix_rows_to_tensor(const Matrix& m, std::span<const std::size_t> rows) {
  std::vector<Real> data;
  data.reserve(rows.size() * m.cols);
  for (std::size_t r : rows) data.insert(data.end(), m.row(r).begin(), m.row(r).end());
  return Tensor({rows.size(), m.cols}, std::move(data));
}

RqVae::RqVae(std::size_t input_dim, const RqVaeConfig& config, std::uint64_t seed)
    : config_(config), input_dim_(input_dim), rng_(Rng::derive(seed, {1})) {
  if (input_dim == 0 || config.latent_dim == 0) throw std::invalid_argument("RqVae: dims must be positive");
  if (config.n_codebooks == 0 || config.codebook_size == 0) {
    throw std::invalid_argument("RqVae: need at least one codebook with at least one entry");
  }
  Rng init = Rng::derive(seed, {0});
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(config.latent_dim);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    params_.create(enc_name(i, "w"), {widths[i], widths[i + 1]}, Init::kXavierUniform, init);
    params_.create(enc_name(i, "b"), {widths[i + 1]}, Init::kZeros, init);
  }
  std::reverse(widths.begin(), widths.end());
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    params_.create(dec_name(i, "w"), {widths[i], widths[i + 1]}, Init::kXavierUniform, init);
    params_.create(dec_name(i, "b"), {widths[i + 1]}, Init::kZeros, init);
  }
  for (std::size_t m = 0; m < config.n_codebooks; ++m) {
    params_.create(cb_name(m), {config.codebook_size, config.latent_dim}, Init::kXavierUniform, init);
  }
  last_used_.assign(config.n_codebooks, std::vector<std::int64_t>(config.codebook_size, 0));
}

Tensor RqVae::codebook(std::size_t level) const { return params_.get(cb_name(level)); }

Tensor RqVae::encode(const Tensor& x) const {
  if (x.cols() != input_dim_) {
    throw std::invalid_argument("RqVae::encode: shape mismatch: input " + shape_string(x.shape()) + ", expected width " +
                                std::to_string(input_dim_));
  }
  return mlp(params_, x, config_.hidden.size() + 1, enc_name);
}

Tensor RqVae::decode(const Tensor& z) const { return mlp(params_, z, config_.hidden.size() + 1, dec_name); }

int RqVae::nearest_entry(std::size_t level, std::span<const Real> r) const {
  const Tensor cb = codebook(level);
  const auto data = cb.data();
  const std::size_t dim = config_.latent_dim;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < config_.codebook_size; ++e) {
    double d = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = static_cast<double>(r[j]) - static_cast<double>(data[e * dim + j]);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(e);
    }
  }
  return best;
}

Quantized RqVae::quantize_latent(std::span<const Real> z) const {
  if (z.size() != config_.latent_dim) throw std::invalid_argument("RqVae::quantize: latent size mismatch");
  Quantized q;
  q.z.assign(z.begin(), z.end());
  q.residual = q.z;
  q.z_hat.assign(z.size(), Real(0));
  for (std::size_t m = 0; m < config_.n_codebooks; ++m) {
    const int v = nearest_entry(m, q.residual);
    q.indices.push_back(v);
    const auto e = codebook(m).data().subspan(static_cast<std::size_t>(v) * config_.latent_dim, config_.latent_dim);
    for (std::size_t j = 0; j < z.size(); ++j) {
      q.residual[j] = q.residual[j] - e[j];
      q.z_hat[j] = q.z_hat[j] + e[j];
    }
  }
  return q;
}

Quantized RqVae::quantize(std::span<const float> x) const {
  NoGradGuard guard;
  const Tensor z = encode(Tensor({1, x.size()}, std::vector<Real>(x.begin(), x.end())));
  return quantize_latent(z.data());
}

std::vector<std::vector<int>> RqVae::quantize_all(const Matrix& x) const {
  std::vector<std::vector<int>> out;
  if (x.rows == 0) return out;
  NoGradGuard guard;
  const Tensor z = encode(matrix_to_tensor(x));
  const std::size_t l = config_.latent_dim;
  for (std::size_t i = 0; i < x.rows; ++i) out.push_back(quantize_latent(z.data().subspan(i * l, l)).indices);
  return out;
}

Tensor RqVae::loss(const Tensor& x, RqVaeLosses* parts, std::vector<std::vector<int>>* indices,
                   std::vector<Tensor>* level_residuals) const {
  const std::size_t batch = x.rows();
  const std::size_t l = config_.latent_dim;
  const Tensor z = encode(x);
  std::vector<std::vector<int>> level_idx(config_.n_codebooks, std::vector<int>(batch));
  for (std::size_t i = 0; i < batch; ++i) {
    const Quantized q = quantize_latent(z.data().subspan(i * l, l));
    for (std::size_t m = 0; m < config_.n_codebooks; ++m) level_idx[m][i] = q.indices[m];
  }
  for (auto& level : level_idx) level = hold_choices(std::move(level));
  Tensor r = z;
  Tensor z_hat;
  Tensor commit;
  for (std::size_t m = 0; m < config_.n_codebooks; ++m) {
    if (level_residuals) level_residuals->push_back(stop_gradient(r));
    const Tensor e = index_rows(codebook(m), level_idx[m]);
    const Tensor e_sg = stop_gradient(e);
    const Tensor term = add(sum_squares(sub(stop_gradient(r), e)), scale(sum_squares(sub(r, e_sg)), static_cast<Real>(config_.beta)));
    commit = commit.defined() ? add(commit, term) : term;
    r = sub(r, e_sg);
    z_hat = z_hat.defined() ? add(z_hat, e) : e;
  }
  const Tensor dec_in = add(z, stop_gradient(sub(z_hat, z)));
  const Tensor recon_x = decode(dec_in);
  const Real inv_b = Real(1) / static_cast<Real>(batch);
  const Tensor recon = scale(sum_squares(sub(x, recon_x)), inv_b);
  commit = scale(commit, inv_b);
  const Tensor total = add(recon, scale(commit, static_cast<Real>(config_.alpha)));
  if (parts) {
    parts->recon = recon.item();
    parts->commit = commit.item();
    parts->total = total.item();
  }
  if (indices) *indices = std::move(level_idx);
  return total;
}

RqVaeLosses RqVae::evaluate(const Matrix& x) const {
  NoGradGuard guard;
  RqVaeLosses parts;
  loss(matrix_to_tensor(x), &parts);
  return parts;
}

void RqVae::init_codebooks(const Matrix& sample, Rng& rng) {
  if (sample.rows == 0) throw std::invalid_argument("RqVae::init_codebooks: empty sample");
  NoGradGuard guard;
  const std::size_t l = config_.latent_dim, n = config_.codebook_size;
  Tensor z = encode(matrix_to_tensor(sample));
  std::vector<Real> r(z.data().begin(), z.data().end());
  for (std::size_t m = 0; m < config_.n_codebooks; ++m) {
    std::vector<std::size_t> order(sample.rows);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    Tensor cb = codebook(m);
    auto dst = cb.mutable_data();
    for (std::size_t e = 0; e < n; ++e) {
      const std::size_t row = e < order.size() ? order[e] : order[rng.uniform_int(order.size())];
      std::copy_n(r.begin() + static_cast<std::ptrdiff_t>(row * l), l, dst.begin() + static_cast<std::ptrdiff_t>(e * l));
    }
    for (std::size_t i = 0; i < sample.rows; ++i) {
      std::span<Real> ri(r.data() + i * l, l);
      const int v = nearest_entry(m, ri);
      for (std::size_t j = 0; j < l; ++j) ri[j] = ri[j] - dst[static_cast<std::size_t>(v) * l + j];
    }
  }
  for (auto& level : last_used_) std::fill(level.begin(), level.end(), steps_);
  initialized_ = true;
}

RqVaeLosses RqVae::train_step(const Matrix& batch, double lr, std::size_t batch_index) {
  if (!initialized_) init_codebooks(batch, rng_);
  RqVaeLosses parts;
  std::vector<std::vector<int>> indices;
  std::vector<Tensor> residuals;
  const Tensor total = loss(matrix_to_tensor(batch), &parts, &indices, &residuals);
  if (!std::isfinite(parts.total)) {
    throw TrainingError("RQ-VAE loss became non-finite at batch " + std::to_string(batch_index));
  }
  backward(total);
  adam_step(params_, lr);
  ++steps_;

  const std::size_t l = config_.latent_dim;
  for (std::size_t m = 0; m < config_.n_codebooks; ++m) {
    for (int v : indices[m]) last_used_[m][static_cast<std::size_t>(v)] = steps_;
    auto& entry = params_.entries()[params_.size() - config_.n_codebooks + m];
    auto dst = entry.value.mutable_data();
    for (std::size_t e = 0; e < config_.codebook_size; ++e) {
      if (steps_ - last_used_[m][e] < static_cast<std::int64_t>(config_.dead_restart_steps)) continue;
      const std::size_t row = static_cast<std::size_t>(rng_.uniform_int(batch.rows));
      const auto src = residuals[m].data().subspan(row * l, l);
      std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(e * l));
      std::fill_n(entry.m.begin() + static_cast<std::ptrdiff_t>(e * l), l, Real(0));
      std::fill_n(entry.v.begin() + static_cast<std::ptrdiff_t>(e * l), l, Real(0));
      last_used_[m][e] = steps_;
      ++restarts_;
    }
  }
  return parts;
}

CodebookUsage RqVae::usage(const Matrix& x) const {
  CodebookUsage out;
  out.counts.assign(config_.n_codebooks, std::vector<std::size_t>(config_.codebook_size, 0));
  for (const auto& idx : quantize_all(x)) {
    for (std::size_t m = 0; m < idx.size(); ++m) ++out.counts[m][static_cast<std::size_t>(idx[m])];
  }
  for (const auto& level : out.counts) out.dead.push_back(static_cast<std::size_t>(std::count(level.begin(), level.end(), 0u)));
  return out;
}

CodebookUsage codebook_usage_stats(const RqVae& model, const Matrix& residuals) { return model.usage(residuals); }

std::vector<RqVaeEpoch> train_rqvae(RqVae& model, const Matrix& data, std::uint64_t seed) {
  const RqVaeConfig& cfg = model.config();
  std::vector<RqVaeEpoch> log;
  if (data.rows == 0 || cfg.epochs == 0) return log;
  const std::size_t batch = std::min(cfg.batch_size, data.rows);
  const std::size_t per_epoch = (data.rows + batch - 1) / batch;
  const auto total_steps = static_cast<std::int64_t>(per_epoch * cfg.epochs);
  ScheduleSpec schedule;
  schedule.mode = ScheduleMode::kInverseSqrt;
  schedule.lr_init = cfg.lr_init;
  schedule.lr_peak = cfg.lr_peak;
  schedule.warmup_steps = static_cast<std::int64_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));

  Rng order_rng = Rng::derive(seed, {7});
  std::vector<std::size_t> order(data.rows);
  std::iota(order.begin(), order.end(), 0);
  if (!model.codebooks_initialized() && batch < cfg.codebook_size) {
    Rng init_rng = Rng::derive(seed, {8});
    model.init_codebooks(data, init_rng);
  }
  std::int64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    RqVaeEpoch entry;
    entry.epoch = epoch;
    double weight = 0.0;
    for (std::size_t start = 0; start < data.rows; start += batch) {
      const std::size_t end = std::min(start + batch, data.rows);
      Matrix mb(end - start, data.cols);
      for (std::size_t i = start; i < end; ++i) std::copy(data.row(order[i]).begin(), data.row(order[i]).end(), mb.row(i - start).begin());
      const double lr = lr_at_step(schedule, step + 1);
      const RqVaeLosses parts = model.train_step(mb, lr, static_cast<std::size_t>(step));
      const double w = static_cast<double>(end - start);
      entry.train.recon += parts.recon * w;
      entry.train.commit += parts.commit * w;
      entry.train.total += parts.total * w;
      weight += w;
      entry.lr = lr;
      ++step;
    }
    entry.train.recon /= weight;
    entry.train.commit /= weight;
    entry.train.total /= weight;
    log.push_back(entry);
  }
  return log;
}

}  // namespace ids
ACE_NAMESPACE_END
