#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ace/data/matrix.hpp"

ACE_NAMESPACE_BEGIN
namespace data {

struct ItemRecord {
  int item_id = 0;
  std::vector<float> embedding;
  int concept_id = 0;
};

struct Corpus {
  std::vector<ItemRecord> items;
  std::size_t dim = 0;
  /// Latent concept centers, one per row.
  Matrix concepts;
  std::uint64_t seed = 0;

  Matrix embeddings() const;
  std::vector<int> concept_ids() const;
};

struct CorpusConfig {
  std::size_t n_items = 512;
  std::size_t n_concepts = 16;
  std::size_t dim = 64;
  double noise_sigma = 0.1;
  /// Radius of the sphere concept centers are drawn on.
  double spread = 1.0;
};

/// Concept centers are uniform on a sphere of radius `spread`, rejected
/// until every pair is at least 6 * noise_sigma apart. Concepts are dealt
/// round-robin to items and then shuffled; each embedding is its concept
/// center plus N(0, noise_sigma^2) per coordinate.
Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed);

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split split);
Split parse_split(const std::string& name);

struct QueryRecord {
  int query_id = 0;
  int item_id = 0;
  std::vector<int> tokens;
  Split split = Split::kTrain;

  friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

struct QueryConfig {
  std::size_t queries_per_item = 5;
  /// Base phrase length: the first half names the concept, the rest the item.
  std::size_t phrase_len = 4;
  double noise_rate = 0.1;
  std::size_t vocab_size = 2048;
};

/// Token ranges used by the synthetic query language.
struct QueryVocabulary {
  std::size_t concept_len = 0;
  std::size_t item_len = 0;
  std::size_t n_concepts = 0;
  std::size_t n_items = 0;
  std::size_t vocab_size = 0;

  std::vector<int> base_phrase(int concept_id, int item_id) const;
};

QueryVocabulary make_query_vocabulary(const Corpus& corpus, const QueryConfig& config);

/// One record per (item, query index), query_id = item * queries_per_item + q.
/// Each query is the item's base phrase with every token independently
/// replaced by a uniform vocabulary token with probability noise_rate.
std::vector<QueryRecord> generate_queries(const Corpus& corpus, const QueryConfig& config, std::uint64_t seed);

/// Assigns train/val/test per query so that the totals track the fractions
/// and every item keeps at least one training query.
std::vector<QueryRecord> split_queries(std::vector<QueryRecord> records, const std::array<double, 3>& fractions,
                                       std::uint64_t seed);

}  // namespace data
ACE_NAMESPACE_END
