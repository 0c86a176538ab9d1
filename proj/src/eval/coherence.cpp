#include "ace/eval/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "ace/tensor/rng.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

namespace {

struct Accumulator {
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;

  void add(double d, bool same) {
    if (same) {
      intra += d;
      ++n_intra;
    } else {
      inter += d;
      ++n_inter;
    }
  }

  PairStats finish(bool exhaustive) const {
    const double nan = std::nan("");
    return {n_intra ? intra / static_cast<double>(n_intra) : nan, n_inter ? inter / static_cast<double>(n_inter) : nan,
            n_intra, n_inter, exhaustive};
  }
};

std::uint64_t pairs_in(std::uint64_t n) { return n * (n - 1) / 2; }

// Unordered pair index -> (i, j), i < j, for a block of n items.
std::pair<std::size_t, std::size_t> unrank_pair(std::uint64_t r, std::uint64_t n) {
  std::uint64_t i = 0;
  while (r >= n - 1 - i) {
    r -= n - 1 - i;
    ++i;
  }
  return {static_cast<std::size_t>(i), static_cast<std::size_t>(i + 1 + r)};
}

// Visits pairs inside each block (range of the ordered item list), all of
// them or `max_pairs` uniform samples with replacement.
template <typename Visit>
bool visit_block_pairs(const std::vector<std::pair<std::size_t, std::size_t>>& blocks, std::size_t max_pairs, Rng& rng,
                       Visit visit) {
  std::vector<std::uint64_t> cumulative;
  std::uint64_t total = 0;
  for (const auto& [b, e] : blocks) {
    total += pairs_in(e - b);
    cumulative.push_back(total);
  }
  if (total <= max_pairs) {
    for (const auto& [b, e] : blocks) {
      for (std::size_t i = b; i < e; ++i) {
        for (std::size_t j = i + 1; j < e; ++j) visit(i, j);
      }
    }
    return true;
  }
  for (std::size_t s = 0; s < max_pairs; ++s) {
    const std::uint64_t r = rng.uniform_int(total);
    const std::size_t blk = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    const std::uint64_t local = r - (blk == 0 ? 0 : cumulative[blk - 1]);
    const auto [b, e] = blocks[blk];
    const auto [i, j] = unrank_pair(local, e - b);
    visit(b + i, b + j);
  }
  return false;
}

}  // namespace

CoherenceReport coherence_stats(const Matrix& embeddings, const std::vector<std::vector<int>>& identifiers,
                                std::uint64_t seed, std::size_t max_pairs) {
  if (embeddings.rows != identifiers.size()) {
    throw std::invalid_argument("coherence_stats: " + std::to_string(embeddings.rows) + " embeddings for " +
                                std::to_string(identifiers.size()) + " identifiers");
  }
  if (max_pairs == 0) throw std::invalid_argument("coherence_stats: max_pairs must be positive");
  for (const auto& id : identifiers) {
    if (id.size() < 2) throw std::invalid_argument("coherence_stats: identifiers need at least two tokens");
  }
  std::vector<std::size_t> order(identifiers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return identifiers[a] < identifiers[b]; });

  std::map<int, std::size_t> coarse_sizes;
  for (const auto& id : identifiers) ++coarse_sizes[id[0]];
  std::size_t populated = 0;
  for (const auto& [g, n] : coarse_sizes) populated += n >= 2 ? 1 : 0;
  if (populated < 2) {
    throw std::invalid_argument("coherence_stats: need at least two coarse groups with two or more members, found " +
                                std::to_string(populated));
  }

  auto dist = [&](std::size_t a, std::size_t b) {
    return std::sqrt(squared_distance(embeddings.row(order[a]), embeddings.row(order[b])));
  };
  auto tok = [&](std::size_t a, std::size_t t) { return identifiers[order[a]][t]; };

  CoherenceReport report;
  report.coarse_groups = coarse_sizes.size();
  const std::size_t n = order.size();

  Rng coarse_rng = Rng::derive(seed, {1});
  Accumulator coarse;
  const bool coarse_exhaustive = visit_block_pairs({{0, n}}, max_pairs, coarse_rng, [&](std::size_t i, std::size_t j) {
    coarse.add(dist(i, j), tok(i, 0) == tok(j, 0));
  });
  report.coarse = coarse.finish(coarse_exhaustive);

  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t b = 0; b < n;) {
    std::size_t e = b + 1;
    while (e < n && tok(e, 0) == tok(b, 0)) ++e;
    if (e - b >= 2) blocks.emplace_back(b, e);
    b = e;
  }
  Rng fine_rng = Rng::derive(seed, {2});
  Accumulator fine;
  const bool fine_exhaustive = visit_block_pairs(blocks, max_pairs, fine_rng, [&](std::size_t i, std::size_t j) {
    fine.add(dist(i, j), tok(i, 1) == tok(j, 1));
  });
  report.fine = fine.finish(fine_exhaustive);
  report.has_fine = report.fine.intra_pairs > 0 && report.fine.inter_pairs > 0;
  return report;
}

nlohmann::ordered_json to_json(const CoherenceReport& r) {
  auto stats = [](const PairStats& s) {
    nlohmann::ordered_json j;
    j["intra"] = s.intra;
    j["inter"] = s.inter;
    j["intra_pairs"] = s.intra_pairs;
    j["inter_pairs"] = s.inter_pairs;
    j["exhaustive"] = s.exhaustive;
    return j;
  };
  nlohmann::ordered_json j;
  j["coarse_groups"] = r.coarse_groups;
  j["coarse"] = stats(r.coarse);
  j["has_fine"] = r.has_fine;
  j["fine"] = stats(r.fine);
  return j;
}

}  // namespace eval
ACE_NAMESPACE_END
