#pragma once

#include <cstdint>
#include <vector>

#include "ace/data/matrix.hpp"
#include "json.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

struct PairStats {
  double intra = 0.0;  // mean distance of pairs sharing the group
  double inter = 0.0;  // mean distance of pairs in different groups
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
  bool exhaustive = true;
};

struct CoherenceReport {
  std::size_t coarse_groups = 0;
  PairStats coarse;  // grouped by the first identifier token
  bool has_fine = false;
  PairStats fine;  // pairs inside one coarse group, grouped by the first two tokens
};

/// Mean pairwise Euclidean distances. Pair populations larger than max_pairs
/// are sampled with `seed`; items are visited in identifier order so the
/// result does not depend on the input order.
CoherenceReport coherence_stats(const Matrix& embeddings, const std::vector<std::vector<int>>& identifiers,
                                std::uint64_t seed = 0, std::size_t max_pairs = 100000);

nlohmann::ordered_json to_json(const CoherenceReport& report);

}  // namespace eval
ACE_NAMESPACE_END
