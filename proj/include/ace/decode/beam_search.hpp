#pragma once

#include <cstddef>
#include <vector>

#include "ace/decode/prefix_tree.hpp"
#include "ace/model/fusion_model.hpp"

ACE_NAMESPACE_BEGIN
namespace decode {

struct RankedItem {
  int item_id = -1;         // -1 when the tokens are not a valid identifier
  std::vector<int> tokens;  // decoder token ids, length J
  double score = 0.0;       // summed log-softmax
};

/// Ranking order: higher score first, then lexicographically smaller tokens.
bool ranks_before(const RankedItem& a, const RankedItem& b);

std::vector<RankedItem> constrained_beam_search(const model::FusionModel& model, const std::vector<int>& query,
                                                const PrefixTree& tree, std::size_t beam);

/// Same search without the prefix tree: step t may emit any token of
/// position t's range. Results found in `tree` (if given) carry their item id.
std::vector<RankedItem> unconstrained_beam_search(const model::FusionModel& model, const std::vector<int>& query,
                                                  std::size_t beam, const PrefixTree* tree = nullptr);

/// Scores every identifier exactly. item_ids may be empty (index is the id).
std::vector<RankedItem> exhaustive_rank(const model::FusionModel& model, const std::vector<int>& query,
                                        const std::vector<std::vector<int>>& identifiers,
                                        const std::vector<int>& item_ids = {});

}  // namespace decode
ACE_NAMESPACE_END
