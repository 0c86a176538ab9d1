#include "ace/decode/beam_search.hpp"

#include <algorithm>
#include <stdexcept>

#include "ace/tensor/ops.hpp"
#include "ace/train/trainer.hpp"

ACE_NAMESPACE_BEGIN
namespace decode {

namespace {

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;
  int node = PrefixTree::root();
};

struct Candidate {
  double score;
  std::size_t parent;
  int token;
};

// Shared J-step search. `expand(h)` lists the tokens hypothesis h may take.
template <typename Expand>
std::vector<Hypothesis> run_beam(const model::FusionModel& model, const std::vector<int>& query, std::size_t beam,
                                 const PrefixTree* tree, Expand expand) {
  if (beam == 0) throw std::invalid_argument("beam search: beam size must be at least 1");
  const auto& layout = model.config().layout;
  const std::size_t j = layout.length(), vocab = layout.total();
  NoGradGuard guard;
  const model::DecoderMemory memory = model.memory(model.encode({query}));
  model::DecodeState state = model.start_decoding(1);
  std::vector<Hypothesis> hyps(1);
  std::vector<int> inputs{static_cast<int>(layout.bos())};
  std::vector<Candidate> cands;
  for (std::size_t t = 0; t < j; ++t) {
    const Tensor logp = log_softmax_rows(model.decode_step(state, inputs, memory));
    const auto d = logp.data();
    cands.clear();
    for (std::size_t h = 0; h < hyps.size(); ++h) {
      for (int tok : expand(hyps[h])) {
        cands.push_back({hyps[h].score + static_cast<double>(d[h * vocab + static_cast<std::size_t>(tok)]), h, tok});
      }
    }
    if (cands.empty()) throw std::logic_error("beam search: no hypothesis can be extended");
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return hyps[a.parent].tokens < hyps[b.parent].tokens;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    std::vector<std::size_t> parents;
    next.reserve(keep);
    inputs.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      Hypothesis h = hyps[c.parent];
      h.tokens.push_back(c.token);
      h.score = c.score;
      if (tree && h.node != PrefixTree::kNoNode) h.node = tree->child(h.node, c.token);
      next.push_back(std::move(h));
      parents.push_back(c.parent);
      inputs.push_back(c.token);
    }
    hyps = std::move(next);
    if (t + 1 < j) model.reorder(state, parents);
  }
  return hyps;
}

std::vector<RankedItem> to_ranked(std::vector<Hypothesis> hyps, const PrefixTree* tree) {
  std::vector<RankedItem> out;
  out.reserve(hyps.size());
  for (auto& h : hyps) {
    const int item = (tree && h.node != PrefixTree::kNoNode) ? tree->item(h.node) : -1;
    out.push_back({item, std::move(h.tokens), h.score});
  }
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

}  // namespace

bool ranks_before(const RankedItem& a, const RankedItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

std::vector<RankedItem> constrained_beam_search(const model::FusionModel& model, const std::vector<int>& query,
                                                const PrefixTree& tree, std::size_t beam) {
  if (tree.empty()) throw std::invalid_argument("constrained_beam_search: empty prefix tree");
  if (tree.depth() != model.config().layout.length()) {
    throw std::invalid_argument("constrained_beam_search: tree depth " + std::to_string(tree.depth()) +
                                " does not match identifier length " +
                                std::to_string(model.config().layout.length()));
  }
  auto hyps = run_beam(model, query, beam, &tree, [&](const Hypothesis& h) { return tree.child_tokens(h.node); });
  return to_ranked(std::move(hyps), &tree);
}

std::vector<RankedItem> unconstrained_beam_search(const model::FusionModel& model, const std::vector<int>& query,
                                                  std::size_t beam, const PrefixTree* tree) {
  const auto& layout = model.config().layout;
  std::vector<int> all(layout.bos());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const PrefixTree* usable = (tree && !tree->empty() && tree->depth() == layout.length()) ? tree : nullptr;
  auto hyps = run_beam(model, query, beam, usable, [&](const Hypothesis& h) {
    const std::size_t t = h.tokens.size();
    return std::span<const int>(all).subspan(layout.offset(t), layout.sizes[t]);
  });
  return to_ranked(std::move(hyps), usable);
}

std::vector<RankedItem> exhaustive_rank(const model::FusionModel& model, const std::vector<int>& query,
                                        const std::vector<std::vector<int>>& identifiers,
                                        const std::vector<int>& item_ids) {
  if (!item_ids.empty() && item_ids.size() != identifiers.size()) {
    throw std::invalid_argument("exhaustive_rank: item id count does not match identifier count");
  }
  const std::vector<double> scores = train::sequence_log_probs(model, query, identifiers);
  std::vector<RankedItem> out;
  out.reserve(identifiers.size());
  for (std::size_t i = 0; i < identifiers.size(); ++i) {
    out.push_back({item_ids.empty() ? static_cast<int>(i) : item_ids[i], identifiers[i], scores[i]});
  }
  std::stable_sort(out.begin(), out.end(), ranks_before);
  return out;
}

}  // namespace decode
ACE_NAMESPACE_END
