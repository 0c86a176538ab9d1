#include "ace/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "ace/data/io.hpp"
#include "ace/ids/rqvae.hpp"
#include "ace/tensor/container.hpp"

ACE_NAMESPACE_BEGIN
namespace train {

namespace {

void check_identifier(const model::VocabLayout& layout, const std::vector<int>& identifier) {
  if (identifier.size() != layout.length()) {
    throw std::invalid_argument("identifier length " + std::to_string(identifier.size()) + " does not match layout length " +
                                std::to_string(layout.length()));
  }
  for (std::size_t p = 0; p < identifier.size(); ++p) {
    if (!layout.token_in_position(p, identifier[p])) {
      throw std::invalid_argument("token " + std::to_string(identifier[p]) + " outside its range at position " +
                                  std::to_string(p));
    }
  }
}

std::vector<int> teacher_prefix(const model::VocabLayout& layout, const std::vector<int>& identifier) {
  std::vector<int> prefix{static_cast<int>(layout.bos())};
  prefix.insert(prefix.end(), identifier.begin(), identifier.end() - 1);
  return prefix;
}

}  // namespace

std::vector<double> sequence_log_probs(const model::FusionModel& model, const std::vector<int>& query,
                                       const std::vector<std::vector<int>>& identifiers) {
  std::vector<double> out;
  if (identifiers.empty()) return out;
  const auto& layout = model.config().layout;
  for (const auto& id : identifiers) check_identifier(layout, id);
  NoGradGuard guard;
  const model::DecoderMemory memory = model.memory(model.encode({query}));
  const std::size_t j = layout.length(), vocab = layout.total();
  constexpr std::size_t kChunk = 512;
  for (std::size_t start = 0; start < identifiers.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, identifiers.size());
    std::vector<std::vector<int>> prefixes;
    for (std::size_t i = start; i < end; ++i) prefixes.push_back(teacher_prefix(layout, identifiers[i]));
    const Tensor logp = log_softmax_rows(model.decoder_forward(prefixes, memory));
    const auto d = logp.data();
    for (std::size_t i = start; i < end; ++i) {
      double total = 0.0;
      for (std::size_t t = 0; t < j; ++t) {
        total += static_cast<double>(d[((i - start) * j + t) * vocab + static_cast<std::size_t>(identifiers[i][t])]);
      }
      out.push_back(total);
    }
  }
  return out;
}

double sequence_log_prob(const model::FusionModel& model, const std::vector<int>& query,
                         const std::vector<int>& identifier) {
  return sequence_log_probs(model, query, {identifier}).front();
}

Tensor bidirectional_kl(const Tensor& p_logits, const Tensor& q_logits) {
  if (p_logits.shape() != q_logits.shape()) {
    throw std::invalid_argument("bidirectional_kl: shape mismatch: " + shape_string(p_logits.shape()) + " vs " +
                                shape_string(q_logits.shape()));
  }
  const std::size_t batch = p_logits.rank() >= 3 ? p_logits.dim(0) : 1;
  const Tensor diff_p = sub(softmax_rows(p_logits), softmax_rows(q_logits));
  const Tensor diff_log = sub(log_softmax_rows(p_logits), log_softmax_rows(q_logits));
  return scale(sum(mul(diff_p, diff_log)), Real(1) / static_cast<Real>(batch));
}

Tensor training_loss(const model::FusionModel& model, const std::vector<Example>& batch, double omega, Rng* rng,
                     StepResult* parts) {
  if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
  const auto& layout = model.config().layout;
  const std::size_t j = layout.length();
  const bool two_pass = omega > 0;
  const std::size_t copies = two_pass ? 2 : 1;
  std::vector<std::vector<int>> queries, prefixes;
  std::vector<int> targets;
  for (std::size_t c = 0; c < copies; ++c) {
    for (const Example& ex : batch) {
      check_identifier(layout, ex.identifier);
      queries.push_back(ex.query);
      prefixes.push_back(teacher_prefix(layout, ex.identifier));
      targets.insert(targets.end(), ex.identifier.begin(), ex.identifier.end());
    }
  }
  const model::DecoderMemory memory = model.memory(model.encode(queries, rng));
  const Tensor logits = model.decoder_forward(prefixes, memory, rng);
  const Tensor ce = cross_entropy(logits, targets);
  Tensor loss = ce;
  Real kl_value = 0;
  if (two_pass) {
    const std::size_t b = batch.size();
    const Tensor kl = scale(bidirectional_kl(slice(logits, 0, 0, b), slice(logits, 0, b, 2 * b)),
                            Real(1) / static_cast<Real>(j));
    loss = add(ce, scale(kl, static_cast<Real>(omega)));
    kl_value = kl.item();
  }
  if (parts) {
    parts->ce = ce.item();
    parts->kl = kl_value;
    parts->loss = loss.item();
  }
  return loss;
}

StepResult training_step(model::FusionModel& model, const std::vector<Example>& batch, const TrainConfig& config,
                         Rng& rng, double lr, std::size_t step_index) {
  StepResult parts;
  const Tensor loss = training_loss(model, batch, config.omega, &rng, &parts);
  if (!std::isfinite(parts.loss)) {
    throw TrainingError("training loss became non-finite at step " + std::to_string(step_index));
  }
  backward(loss);
  adam_step(model.params(), lr);
  return parts;
}

double mean_token_nll(const model::FusionModel& model, const std::vector<Example>& examples, std::size_t batch_size) {
  if (examples.empty()) return 0.0;
  NoGradGuard guard;
  double total = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, examples.size());
    std::vector<Example> chunk(examples.begin() + static_cast<std::ptrdiff_t>(start),
                               examples.begin() + static_cast<std::ptrdiff_t>(end));
    StepResult parts;
    training_loss(model, chunk, 0.0, nullptr, &parts);
    total += parts.ce * static_cast<double>(end - start);
  }
  return total / static_cast<double>(examples.size());
}

ScheduleSpec schedule_for(const TrainConfig& config, std::size_t steps_per_epoch) {
  ScheduleSpec s;
  s.mode = ScheduleMode::kCosine;
  s.lr_init = config.lr_init;
  s.lr_peak = config.lr_peak;
  s.warmup_steps = static_cast<std::int64_t>(config.warmup_epochs * steps_per_epoch);
  const std::size_t rest = config.epochs > config.warmup_epochs ? config.epochs - config.warmup_epochs : 1;
  s.period_steps = static_cast<std::int64_t>(std::max<std::size_t>(1, rest * steps_per_epoch));
  return s;
}

TrainResult train_loop(model::FusionModel& model, const std::vector<Example>& train_set,
                       const std::vector<Example>& val_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (config.batch_size == 0) throw std::invalid_argument("train_loop: batch_size must be >= 1");
  if (!(config.omega >= 0)) throw std::invalid_argument("train_loop: omega must be >= 0");
  TrainResult result;
  if (config.epochs == 0 || train_set.empty()) return result;
  const std::size_t per_epoch = (train_set.size() + config.batch_size - 1) / config.batch_size;
  const ScheduleSpec schedule = schedule_for(config, per_epoch);
  Rng shuffle_rng = Rng::derive(config.seed, {200});
  Rng dropout_rng = Rng::derive(config.seed, {201});
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<std::vector<Real>> best;
  result.best_val_nll = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    EpochLog log;
    log.epoch = epoch;
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(start + config.batch_size, order.size());
      std::vector<Example> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      log.lr = lr_at_step(schedule, step);
      const StepResult r = training_step(model, batch, config, dropout_rng, log.lr, static_cast<std::size_t>(step));
      const double w = static_cast<double>(end - start);
      log.loss += r.loss * w;
      log.ce += r.ce * w;
      log.kl += r.kl * w;
      weight += w;
      ++step;
    }
    log.loss /= weight;
    log.ce /= weight;
    log.kl /= weight;
    log.val_nll = val_set.empty() ? log.ce : mean_token_nll(model, val_set);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.val_nll < result.best_val_nll) {
      result.best_val_nll = log.val_nll;
      result.best_epoch = epoch;
      if (config.restore_best) {
        best.clear();
        for (const auto& e : model.params().entries()) best.emplace_back(e.value.data().begin(), e.value.data().end());
      }
    }
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (config.restore_best && !best.empty()) {
    auto& entries = model.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      std::copy(best[i].begin(), best[i].end(), entries[i].value.mutable_data().begin());
    }
  }
  return result;
}

nlohmann::ordered_json model_config_to_json(const model::ModelConfig& c) {
  nlohmann::ordered_json j;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["ffn_dim"] = c.ffn_dim;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["dropout_rate"] = c.dropout_rate;
  j["query_vocab_size"] = c.query_vocab_size;
  j["max_len"] = c.max_len;
  j["gate_mode"] = model::gate_mode_name(c.gate_mode);
  j["fusion_mode"] = model::fusion_mode_name(c.fusion_mode);
  j["layout"] = c.layout.sizes;
  return j;
}

model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.query_vocab_size = j.at("query_vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.gate_mode = model::parse_gate_mode(j.at("gate_mode").get<std::string>());
  c.fusion_mode = model::parse_fusion_mode(j.at("fusion_mode").get<std::string>());
  c.layout.sizes = j.at("layout").get<std::vector<std::size_t>>();
  return c;
}

void save_checkpoint(const model::FusionModel& model, const std::filesystem::path& path,
                     const nlohmann::ordered_json& extra) {
  write_container(path, export_parameters(model.params()));
  nlohmann::ordered_json sidecar;
  sidecar["format"] = "ACECKP01";
  sidecar["model"] = model_config_to_json(model.config());
  sidecar["layout_fingerprint"] = model.config().layout.fingerprint();
  for (auto it = extra.begin(); it != extra.end(); ++it) sidecar[it.key()] = it.value();
  data::write_text_file(path.string() + ".json", sidecar.dump(2) + "\n");
}

model::FusionModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* sidecar) {
  const auto tensors = read_container(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(data::read_text_file(path.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint sidecar " + path.string() + ".json: " + e.what(), 0);
  }
  model::FusionModel m(model_config_from_json(meta.at("model")), 0);
  import_parameters(tensors, m.params());
  if (sidecar) *sidecar = meta;
  return m;
}

}  // namespace train
ACE_NAMESPACE_END
