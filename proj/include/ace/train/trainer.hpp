#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ace/model/fusion_model.hpp"
#include "json.hpp"

ACE_NAMESPACE_BEGIN
namespace train {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  double omega = 0.15;
  double lr_init = 1e-6;
  double lr_peak = 1e-4;
  std::size_t warmup_epochs = 5;
  std::uint64_t seed = 0;
  bool restore_best = true;
};

/// A query and its identifier as decoder token ids (no BOS).
struct Example {
  std::vector<int> query;
  std::vector<int> identifier;
  int item_id = -1;
};

/// Sum over positions of log softmax of the gold token, dropout off.
double sequence_log_prob(const model::FusionModel& model, const std::vector<int>& query,
                         const std::vector<int>& identifier);
/// Scores many identifiers for one query with a single shared encoding.
std::vector<double> sequence_log_probs(const model::FusionModel& model, const std::vector<int>& query,
                                       const std::vector<std::vector<int>>& identifiers);

/// KL(P||Q) + KL(Q||P) of row softmaxes, summed over positions and
/// averaged over the leading batch axis ([B, J, V] or [rows, V] as B = 1).
Tensor bidirectional_kl(const Tensor& p_logits, const Tensor& q_logits);

struct StepResult {
  double loss = 0.0;
  double ce = 0.0;
  double kl = 0.0;
};

/// Teacher-forced loss of one batch: ce is the token-mean NLL over both
/// dropout passes, kl the per-token bidirectional KL between the passes,
/// loss = ce + omega * kl. With omega = 0 only one pass runs.
Tensor training_loss(const model::FusionModel& model, const std::vector<Example>& batch, double omega, Rng* rng,
                     StepResult* parts);
StepResult training_step(model::FusionModel& model, const std::vector<Example>& batch, const TrainConfig& config,
                         Rng& rng, double lr, std::size_t step_index);

/// Mean per-token NLL with dropout off.
double mean_token_nll(const model::FusionModel& model, const std::vector<Example>& examples,
                      std::size_t batch_size = 256);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_nll = 0.0;
};

ScheduleSpec schedule_for(const TrainConfig& config, std::size_t steps_per_epoch);

using EpochCallback = std::function<void(const EpochLog&)>;
TrainResult train_loop(model::FusionModel& model, const std::vector<Example>& train_set,
                       const std::vector<Example>& val_set, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

nlohmann::ordered_json model_config_to_json(const model::ModelConfig& config);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

/// Writes the parameter container and a JSON sidecar at path + ".json".
void save_checkpoint(const model::FusionModel& model, const std::filesystem::path& path,
                     const nlohmann::ordered_json& extra = nlohmann::ordered_json::object());
model::FusionModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* sidecar = nullptr);

}  // namespace train
ACE_NAMESPACE_END
