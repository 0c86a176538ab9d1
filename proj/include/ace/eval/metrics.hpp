#pragma once

#include <span>
#include <string>
#include <vector>

#include "ace/decode/beam_search.hpp"
#include "ace/train/trainer.hpp"
#include "json.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

/// 1 iff gold is among the first k entries.
int recall_at_k(std::span<const int> ranked, int gold, std::size_t k);
/// 1/rank when the gold rank is at most k, else 0.
double mrr_at_k(std::span<const int> ranked, int gold, std::size_t k = 10);

struct EvalReport {
  std::string split;
  std::size_t beam_size = 0;
  bool constrained = true;
  std::size_t n_queries = 0;
  double recall1 = 0.0;
  double recall5 = 0.0;
  double recall10 = 0.0;
  double mrr10 = 0.0;
  std::string fingerprint;
};

/// Beam-searches every example and averages the metrics, one report per beam
/// size. Unconstrained outputs that are not identifiers count as misses.
std::vector<EvalReport> run_eval(const model::FusionModel& model, const decode::PrefixTree& tree,
                                 const std::vector<train::Example>& examples, const std::vector<std::size_t>& beams,
                                 bool constrained = true, const std::string& split = "test");

struct PositionAccuracy {
  std::vector<double> per_position;
  double first = 0.0;
  double later = 0.0;  // mean over positions after the first
  std::size_t n_queries = 0;
};

/// Teacher-forced argmax accuracy per identifier position, dropout off.
PositionAccuracy token_position_accuracy(const model::FusionModel& model, const std::vector<train::Example>& examples,
                                         std::size_t batch_size = 256);

nlohmann::ordered_json to_json(const EvalReport& report);
nlohmann::ordered_json to_json(const PositionAccuracy& acc);
std::string reports_table(const std::vector<EvalReport>& reports);
std::string reports_csv(const std::vector<EvalReport>& reports);

}  // namespace eval
ACE_NAMESPACE_END
