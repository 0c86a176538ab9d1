#include "ace/data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ace/tensor/rng.hpp"

ACE_NAMESPACE_BEGIN
namespace data {

namespace {

// Substream tags under the user seed.
constexpr std::uint64_t kStreamCenters = 1;
constexpr std::uint64_t kStreamAssign = 2;
constexpr std::uint64_t kStreamNoise = 3;
constexpr std::uint64_t kStreamQuery = 4;
constexpr std::uint64_t kStreamSplit = 5;

constexpr int kMaxCenterAttempts = 10000;

}  // namespace

Matrix Corpus::embeddings() const {
  Matrix out(items.size(), dim);
  for (std::size_t i = 0; i < items.size(); ++i) std::copy(items[i].embedding.begin(), items[i].embedding.end(), out.row(i).begin());
  return out;
}

std::vector<int> Corpus::concept_ids() const {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.concept_id);
  return out;
}

Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
  if (config.n_items == 0) throw std::invalid_argument("generate_corpus: n_items must be positive");
  if (config.n_concepts == 0 || config.n_concepts > config.n_items) {
    throw std::invalid_argument("generate_corpus: need 1 <= n_concepts <= n_items, got " +
                                std::to_string(config.n_concepts) + " concepts for " + std::to_string(config.n_items) +
                                " items");
  }
  if (config.dim < 2) throw std::invalid_argument("generate_corpus: dim must be at least 2");
  if (!(config.noise_sigma >= 0)) throw std::invalid_argument("generate_corpus: noise_sigma must be non-negative");
  if (!(config.spread > 0)) throw std::invalid_argument("generate_corpus: spread must be positive");

  Corpus corpus;
  corpus.dim = config.dim;
  corpus.seed = seed;
  corpus.concepts = Matrix(config.n_concepts, config.dim);

  Rng center_rng = Rng::derive(seed, {kStreamCenters});
  const double min_dist_sq = std::pow(6.0 * config.noise_sigma, 2);
  std::vector<float> candidate(config.dim);
  for (std::size_t c = 0; c < config.n_concepts; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxCenterAttempts && !placed; ++attempt) {
      double norm = 0.0;
      std::vector<double> raw(config.dim);
      for (auto& x : raw) {
        x = center_rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      if (norm == 0.0) continue;
      for (std::size_t d = 0; d < config.dim; ++d) candidate[d] = static_cast<float>(raw[d] / norm * config.spread);
      placed = true;
      for (std::size_t prev = 0; prev < c; ++prev) {
        const double d2 = squared_distance(candidate, corpus.concepts.row(prev));
        if (d2 < min_dist_sq || d2 == 0.0) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) {
      throw std::invalid_argument("generate_corpus: could not place " + std::to_string(config.n_concepts) +
                                  " concept centers at separation " + std::to_string(6.0 * config.noise_sigma));
    }
    std::copy(candidate.begin(), candidate.end(), corpus.concepts.row(c).begin());
  }

  std::vector<int> assignment(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) assignment[i] = static_cast<int>(i % config.n_concepts);
  Rng assign_rng = Rng::derive(seed, {kStreamAssign});
  assign_rng.shuffle(std::span<int>(assignment));

  corpus.items.resize(config.n_items);
  for (std::size_t i = 0; i < config.n_items; ++i) {
    ItemRecord& item = corpus.items[i];
    item.item_id = static_cast<int>(i);
    item.concept_id = assignment[i];
    item.embedding.resize(config.dim);
    Rng noise = Rng::derive(seed, {kStreamNoise, i});
    const auto center = corpus.concepts.row(static_cast<std::size_t>(item.concept_id));
    for (std::size_t d = 0; d < config.dim; ++d) {
      const double eps = config.noise_sigma > 0 ? noise.normal() * config.noise_sigma : 0.0;
      item.embedding[d] = static_cast<float>(center[d] + eps);
    }
  }
  return corpus;
}

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "'");
}

std::vector<int> QueryVocabulary::base_phrase(int concept_id, int item_id) const {
  std::vector<int> phrase;
  phrase.reserve(concept_len + item_len);
  const std::size_t concept_base = static_cast<std::size_t>(concept_id) * concept_len;
  for (std::size_t t = 0; t < concept_len; ++t) phrase.push_back(static_cast<int>(concept_base + t));
  const std::size_t item_base = n_concepts * concept_len + static_cast<std::size_t>(item_id) * item_len;
  for (std::size_t t = 0; t < item_len; ++t) phrase.push_back(static_cast<int>(item_base + t));
  return phrase;
}

QueryVocabulary make_query_vocabulary(const Corpus& corpus, const QueryConfig& config) {
  if (config.phrase_len < 2) throw std::invalid_argument("generate_queries: phrase_len must be at least 2");
  QueryVocabulary vocab;
  vocab.concept_len = config.phrase_len / 2;
  vocab.item_len = config.phrase_len - vocab.concept_len;
  vocab.n_concepts = corpus.concepts.rows;
  vocab.n_items = corpus.items.size();
  vocab.vocab_size = config.vocab_size;
  const std::size_t needed = vocab.n_concepts * vocab.concept_len + vocab.n_items * vocab.item_len;
  if (needed > config.vocab_size) {
    throw std::invalid_argument("generate_queries: vocab_size " + std::to_string(config.vocab_size) +
                                " cannot hold disjoint concept/item blocks (" + std::to_string(needed) + " tokens needed)");
  }
  return vocab;
}

std::vector<QueryRecord> generate_queries(const Corpus& corpus, const QueryConfig& config, std::uint64_t seed) {
  if (config.queries_per_item == 0) throw std::invalid_argument("generate_queries: queries_per_item must be >= 1");
  if (!(config.noise_rate >= 0) || config.noise_rate >= 1) {
    throw std::invalid_argument("generate_queries: noise_rate must be in [0, 1)");
  }
  const QueryVocabulary vocab = make_query_vocabulary(corpus, config);
  std::vector<QueryRecord> records;
  records.reserve(corpus.items.size() * config.queries_per_item);
  for (const ItemRecord& item : corpus.items) {
    const std::vector<int> base = vocab.base_phrase(item.concept_id, item.item_id);
    for (std::size_t q = 0; q < config.queries_per_item; ++q) {
      Rng rng = Rng::derive(seed, {kStreamQuery, static_cast<std::uint64_t>(item.item_id), q});
      QueryRecord record;
      record.query_id = static_cast<int>(static_cast<std::size_t>(item.item_id) * config.queries_per_item + q);
      record.item_id = item.item_id;
      record.tokens = base;
      for (int& token : record.tokens) {
        const double draw = rng.uniform();
        const int replacement = static_cast<int>(rng.uniform_int(config.vocab_size));
        if (draw < config.noise_rate) token = replacement;
      }
      records.push_back(std::move(record));
    }
  }
  return records;
}

std::vector<QueryRecord> split_queries(std::vector<QueryRecord> records, const std::array<double, 3>& fractions,
                                       std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0)) throw std::invalid_argument("split_queries: fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split_queries: fractions must sum to 1");
  if (fractions[0] == 0.0 && !records.empty()) {
    throw std::invalid_argument("split_queries: a zero train fraction would leave items without training queries");
  }

  std::map<int, std::vector<std::size_t>> by_item;
  for (std::size_t i = 0; i < records.size(); ++i) by_item[records[i].item_id].push_back(i);

  std::array<double, 3> assigned{0, 0, 0};
  double seen = 0.0;
  for (auto& [item_id, indices] : by_item) {
    const double q = static_cast<double>(indices.size());
    seen += q;
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = fractions[s] * q;
      counts[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
      remainder[s] = exact - static_cast<double>(counts[s]);
      used += counts[s];
    }
    std::size_t leftover = indices.size() - used;
    if (counts[0] == 0) {
      // Guaranteed to exist: fractions sum to 1 so at least one slot is unassigned.
      if (leftover == 0) throw std::invalid_argument("split_queries: item " + std::to_string(item_id) + " would lose all training queries");
      counts[0] = 1;
      remainder[0] = 0.0;
      --leftover;
    }
    while (leftover > 0) {
      // Largest running deficit among splits with a fractional share.
      std::size_t best = 3;
      double best_deficit = -1e300;
      for (std::size_t s = 0; s < 3; ++s) {
        if (remainder[s] <= 1e-12) continue;
        const double deficit = fractions[s] * seen - (assigned[s] + static_cast<double>(counts[s]));
        if (deficit > best_deficit) {
          best_deficit = deficit;
          best = s;
        }
      }
      if (best == 3) best = 0;
      ++counts[best];
      remainder[best] = 0.0;
      --leftover;
    }
    for (std::size_t s = 0; s < 3; ++s) assigned[s] += static_cast<double>(counts[s]);

    Rng rng = Rng::derive(seed, {kStreamSplit, static_cast<std::uint64_t>(item_id)});
    std::vector<std::size_t> order = indices;
    rng.shuffle(std::span<std::size_t>(order));
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < counts[s]; ++c) records[order[pos++]].split = static_cast<Split>(s);
    }
  }
  return records;
}

}  // namespace data
ACE_NAMESPACE_END
