#include "ace/eval/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "ace/tensor/ops.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

namespace {

std::size_t rank_of(std::span<const int> ranked, int gold) {
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i] == gold) return i + 1;
  }
  return 0;
}

}  // namespace

int recall_at_k(std::span<const int> ranked, int gold, std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be at least 1");
  const std::size_t r = rank_of(ranked, gold);
  return r != 0 && r <= k ? 1 : 0;
}

double mrr_at_k(std::span<const int> ranked, int gold, std::size_t k) {
  if (k == 0) throw std::invalid_argument("mrr_at_k: k must be at least 1");
  const std::size_t r = rank_of(ranked, gold);
  return r != 0 && r <= k ? 1.0 / static_cast<double>(r) : 0.0;
}

std::vector<EvalReport> run_eval(const model::FusionModel& model, const decode::PrefixTree& tree,
                                 const std::vector<train::Example>& examples, const std::vector<std::size_t>& beams,
                                 bool constrained, const std::string& split) {
  std::vector<EvalReport> reports;
  for (std::size_t beam : beams) {
    EvalReport r;
    r.split = split;
    r.beam_size = beam;
    r.constrained = constrained;
    r.n_queries = examples.size();
    for (const auto& ex : examples) {
      const auto ranked = constrained ? decode::constrained_beam_search(model, ex.query, tree, beam)
                                      : decode::unconstrained_beam_search(model, ex.query, beam, &tree);
      std::vector<int> ids;
      ids.reserve(ranked.size());
      for (const auto& item : ranked) ids.push_back(item.item_id);
      r.recall1 += recall_at_k(ids, ex.item_id, 1);
      r.recall5 += recall_at_k(ids, ex.item_id, 5);
      r.recall10 += recall_at_k(ids, ex.item_id, 10);
      r.mrr10 += mrr_at_k(ids, ex.item_id, 10);
    }
    if (!examples.empty()) {
      const double n = static_cast<double>(examples.size());
      r.recall1 /= n;
      r.recall5 /= n;
      r.recall10 /= n;
      r.mrr10 /= n;
    }
    reports.push_back(r);
  }
  return reports;
}

PositionAccuracy token_position_accuracy(const model::FusionModel& model, const std::vector<train::Example>& examples,
                                         std::size_t batch_size) {
  const auto& layout = model.config().layout;
  const std::size_t j = layout.length(), vocab = layout.total();
  PositionAccuracy acc;
  acc.per_position.assign(j, 0.0);
  acc.n_queries = examples.size();
  if (examples.empty()) return acc;
  NoGradGuard guard;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, examples.size());
    std::vector<std::vector<int>> queries, prefixes;
    for (std::size_t i = start; i < end; ++i) {
      queries.push_back(examples[i].query);
      std::vector<int> p{static_cast<int>(layout.bos())};
      p.insert(p.end(), examples[i].identifier.begin(), examples[i].identifier.end() - 1);
      prefixes.push_back(std::move(p));
    }
    const Tensor logits = model.decoder_forward(prefixes, model.memory(model.encode(queries)));
    const auto d = logits.data();
    for (std::size_t i = start; i < end; ++i) {
      for (std::size_t t = 0; t < j; ++t) {
        const auto* row = d.data() + ((i - start) * j + t) * vocab;
        const auto best = static_cast<int>(std::max_element(row, row + vocab) - row);
        if (best == examples[i].identifier[t]) acc.per_position[t] += 1.0;
      }
    }
  }
  for (double& a : acc.per_position) a /= static_cast<double>(examples.size());
  acc.first = acc.per_position.front();
  if (j > 1) {
    double s = 0.0;
    for (std::size_t t = 1; t < j; ++t) s += acc.per_position[t];
    acc.later = s / static_cast<double>(j - 1);
  }
  return acc;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["split"] = r.split;
  j["beam_size"] = r.beam_size;
  j["constrained"] = r.constrained;
  j["n_queries"] = r.n_queries;
  j["recall@1"] = r.recall1;
  j["recall@5"] = r.recall5;
  j["recall@10"] = r.recall10;
  j["mrr@10"] = r.mrr10;
  j["config_fingerprint"] = r.fingerprint;
  return j;
}

nlohmann::ordered_json to_json(const PositionAccuracy& acc) {
  nlohmann::ordered_json j;
  j["per_position"] = acc.per_position;
  j["first"] = acc.first;
  j["later"] = acc.later;
  j["n_queries"] = acc.n_queries;
  return j;
}

std::string reports_table(const std::vector<EvalReport>& reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-6s %5s %11s %8s %9s %9s %10s %8s\n", "split", "beam", "constrained", "queries",
                "recall@1", "recall@5", "recall@10", "mrr@10");
  out += line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%-6s %5zu %11s %8zu %9.4f %9.4f %10.4f %8.4f\n", r.split.c_str(), r.beam_size,
                  r.constrained ? "yes" : "no", r.n_queries, r.recall1, r.recall5, r.recall10, r.mrr10);
    out += line;
  }
  return out;
}

std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::string out = "split,beam_size,constrained,n_queries,recall@1,recall@5,recall@10,mrr@10,config_fingerprint\n";
  char line[256];
  for (const auto& r : reports) {
    std::snprintf(line, sizeof(line), "%s,%zu,%d,%zu,%.6f,%.6f,%.6f,%.6f,%s\n", r.split.c_str(), r.beam_size,
                  r.constrained ? 1 : 0, r.n_queries, r.recall1, r.recall5, r.recall10, r.mrr10, r.fingerprint.c_str());
    out += line;
  }
  return out;
}

}  // namespace eval
ACE_NAMESPACE_END
