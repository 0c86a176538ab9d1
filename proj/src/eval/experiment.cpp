#include "ace/eval/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <memory>
#include <stdexcept>

ACE_NAMESPACE_BEGIN
namespace eval {

const std::vector<train::Example>& Dataset::split(data::Split s) const {
  switch (s) {
    case data::Split::kTrain:
      return train;
    case data::Split::kVal:
      return val;
    case data::Split::kTest:
      return test;
  }
  return test;
}

std::vector<train::Example> make_examples(const std::vector<data::QueryRecord>& records,
                                          const ids::IdentifierBuild& ids, std::optional<data::Split> split) {
  std::vector<train::Example> out;
  for (const auto& r : records) {
    if (split && r.split != *split) continue;
    if (r.item_id < 0 || static_cast<std::size_t>(r.item_id) >= ids.identifiers.size()) {
      throw std::invalid_argument("query " + std::to_string(r.query_id) + " names unknown item " +
                                  std::to_string(r.item_id));
    }
    out.push_back({r.tokens, ids.layout.to_tokens(ids.identifiers[static_cast<std::size_t>(r.item_id)]), r.item_id});
  }
  return out;
}

Dataset prepare_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  Dataset d;
  d.corpus = data::generate_corpus(config.corpus, seed);
  d.queries = data::split_queries(data::generate_queries(d.corpus, config.queries, seed), config.split, seed);
  d.ids = ids::build_identifiers(d.corpus.embeddings(), config.identifiers, seed);
  d.tree = decode::build_prefix_tree(d.ids.identifiers, d.ids.layout);
  d.train = make_examples(d.queries, d.ids, data::Split::kTrain);
  d.val = make_examples(d.queries, d.ids, data::Split::kVal);
  d.test = make_examples(d.queries, d.ids, data::Split::kTest);
  return d;
}

TrainedRun train_run(const ExperimentConfig& config, std::uint64_t seed, const train::EpochCallback& on_epoch) {
  Dataset data = prepare_dataset(config, seed);
  model::ModelConfig mc = config.model;
  mc.layout = data.ids.layout;
  mc.query_vocab_size = std::max(mc.query_vocab_size, config.queries.vocab_size);
  model::FusionModel model(mc, seed);
  train::TrainConfig tc = config.train;
  tc.seed = seed;
  train::TrainResult result = train::train_loop(model, data.train, data.val, tc, on_epoch);
  return {std::move(data), std::move(model), std::move(result)};
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kFull:
      return "full";
    case Variant::kNoConstrained:
      return "no_constrained_beam";
    case Variant::kNoConsistency:
      return "no_consistency_loss";
    case Variant::kNoFusion:
      return "no_fusion";
    case Variant::kNoKMeans:
      return "no_kmeans_token";
    case Variant::kNoRqVae:
      return "no_rqvae_token";
  }
  return "full";
}

std::vector<Variant> all_variants() {
  return {Variant::kFull,     Variant::kNoConstrained, Variant::kNoConsistency,
          Variant::kNoFusion, Variant::kNoKMeans,      Variant::kNoRqVae};
}

Variant parse_variant(const std::string& name) {
  for (Variant v : all_variants()) {
    if (variant_name(v) == name) return v;
  }
  throw std::invalid_argument("unknown ablation variant '" + name + "'");
}

ExperimentConfig apply_variant(ExperimentConfig config, Variant v) {
  switch (v) {
    case Variant::kFull:
    case Variant::kNoConstrained:
      break;
    case Variant::kNoConsistency:
      config.train.omega = 0.0;
      break;
    case Variant::kNoFusion:
      config.model.fusion_mode = model::FusionMode::kVanillaCross;
      break;
    case Variant::kNoKMeans:
      config.identifiers.mode = ids::IdentifierMode::kNoKMeans;
      break;
    case Variant::kNoRqVae:
      config.identifiers.mode = ids::IdentifierMode::kHierarchicalKMeans;
      break;
  }
  return config;
}

bool variant_constrained(Variant v) { return v != Variant::kNoConstrained; }

EvalReport median_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("median_report: no reports");
  auto median = [&](double EvalReport::*field) {
    std::vector<double> v;
    for (const auto& r : reports) v.push_back(r.*field);
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  EvalReport m = reports.front();
  m.recall1 = median(&EvalReport::recall1);
  m.recall5 = median(&EvalReport::recall5);
  m.recall10 = median(&EvalReport::recall10);
  m.mrr10 = median(&EvalReport::mrr10);
  std::size_t n = 0;
  for (const auto& r : reports) n += r.n_queries;
  m.n_queries = n;
  return m;
}

std::vector<AblationRow> run_ablations(const ExperimentConfig& config, const std::vector<std::uint64_t>& seeds,
                                       const std::vector<Variant>& variants, std::size_t beam, data::Split split,
                                       const ProgressCallback& progress) {
  if (seeds.empty()) throw std::invalid_argument("run_ablations: at least one seed is required");
  std::vector<AblationRow> rows;
  for (Variant v : variants) rows.push_back({v, {}, {}});
  for (std::uint64_t seed : seeds) {
    // Variants mapping to the same training configuration share the model.
    std::map<Variant, std::size_t> trained_for;
    std::vector<std::pair<Variant, std::unique_ptr<TrainedRun>>> runs;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Variant v = rows[r].variant;
      const Variant train_key = v == Variant::kNoConstrained ? Variant::kFull : v;
      auto it = trained_for.find(train_key);
      if (it == trained_for.end()) {
        if (progress) progress("training " + variant_name(train_key) + " seed " + std::to_string(seed));
        runs.emplace_back(train_key, std::make_unique<TrainedRun>(train_run(apply_variant(config, train_key), seed)));
        it = trained_for.emplace(train_key, runs.size() - 1).first;
      }
      const TrainedRun& run = *runs[it->second].second;
      EvalReport rep = run_eval(run.model, run.data.tree, run.data.split(split), {beam}, variant_constrained(v),
                                data::split_name(split))
                           .front();
      if (progress) {
        char line[160];
        std::snprintf(line, sizeof(line), "%s seed %llu recall@1 %.4f recall@10 %.4f", variant_name(v).c_str(),
                      static_cast<unsigned long long>(seed), rep.recall1, rep.recall10);
        progress(line);
      }
      rows[r].per_seed.push_back(rep);
    }
  }
  for (auto& row : rows) row.median = median_report(row.per_seed);
  return rows;
}

nlohmann::ordered_json to_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json j;
    j["variant"] = variant_name(row.variant);
    j["median"] = to_json(row.median);
    j["per_seed"] = nlohmann::ordered_json::array();
    for (const auto& r : row.per_seed) j["per_seed"].push_back(to_json(r));
    out.push_back(j);
  }
  return out;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-20s %6s %9s %9s %10s %8s\n", "variant", "seeds", "recall@1", "recall@5",
                "recall@10", "mrr@10");
  out += line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-20s %6zu %9.4f %9.4f %10.4f %8.4f\n", variant_name(row.variant).c_str(),
                  row.per_seed.size(), row.median.recall1, row.median.recall5, row.median.recall10, row.median.mrr10);
    out += line;
  }
  return out;
}

}  // namespace eval
ACE_NAMESPACE_END
