#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ace/data/synth.hpp"
#include "ace/decode/prefix_tree.hpp"
#include "ace/eval/metrics.hpp"
#include "ace/ids/identifiers.hpp"
#include "ace/train/trainer.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

/// Everything needed to go from a seed to a trained retriever.
struct ExperimentConfig {
  data::CorpusConfig corpus;
  data::QueryConfig queries;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  ids::IdentifierConfig identifiers;
  model::ModelConfig model;  // layout is taken from the identifiers
  train::TrainConfig train;  // seed is overridden per run
};

struct Dataset {
  data::Corpus corpus;
  std::vector<data::QueryRecord> queries;
  ids::IdentifierBuild ids;
  decode::PrefixTree tree;
  std::vector<train::Example> train, val, test;

  const std::vector<train::Example>& split(data::Split s) const;
};

Dataset prepare_dataset(const ExperimentConfig& config, std::uint64_t seed);
std::vector<train::Example> make_examples(const std::vector<data::QueryRecord>& records,
                                          const ids::IdentifierBuild& ids, std::optional<data::Split> split);

struct TrainedRun {
  Dataset data;
  model::FusionModel model;
  train::TrainResult result;
};

TrainedRun train_run(const ExperimentConfig& config, std::uint64_t seed, const train::EpochCallback& on_epoch = {});

enum class Variant { kFull, kNoConstrained, kNoConsistency, kNoFusion, kNoKMeans, kNoRqVae };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
std::vector<Variant> all_variants();
ExperimentConfig apply_variant(ExperimentConfig config, Variant v);
bool variant_constrained(Variant v);

struct AblationRow {
  Variant variant;
  std::vector<EvalReport> per_seed;
  EvalReport median;
};

/// Per-metric median over reports (upper median for even counts is not
/// used: the mean of the two middle values is).
EvalReport median_report(const std::vector<EvalReport>& reports);

using ProgressCallback = std::function<void(const std::string&)>;

/// Trains every variant for every seed and evaluates `split` at `beam`.
/// Variants that differ only in decoding share one trained model per seed.
std::vector<AblationRow> run_ablations(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                       const std::vector<Variant>& variants, std::size_t beam,
                                       data::Split split = data::Split::kTest, const ProgressCallback& progress = {});

nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace eval
ACE_NAMESPACE_END
