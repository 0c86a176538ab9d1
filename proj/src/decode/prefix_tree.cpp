#include "ace/decode/prefix_tree.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

ACE_NAMESPACE_BEGIN
namespace decode {

PrefixTree PrefixTree::build(const std::vector<std::vector<int>>& identifiers, const std::vector<int>& item_ids) {
  if (!item_ids.empty() && item_ids.size() != identifiers.size()) {
    throw std::invalid_argument("build_prefix_tree: " + std::to_string(item_ids.size()) + " item ids for " +
                                std::to_string(identifiers.size()) + " identifiers");
  }
  PrefixTree tree;
  tree.tokens_.push_back(-1);
  tree.first_child_.push_back(0);
  tree.child_count_.push_back(0);
  tree.items_.push_back(-1);
  if (identifiers.empty()) return tree;
  const std::size_t depth = identifiers.front().size();
  if (depth == 0) throw std::invalid_argument("build_prefix_tree: empty identifier");
  for (const auto& id : identifiers) {
    if (id.size() != depth) throw std::invalid_argument("build_prefix_tree: identifiers must share one length");
  }
  tree.depth_ = depth;
  std::vector<std::uint32_t> order(identifiers.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return identifiers[a] < identifiers[b]; });

  struct Range {
    std::uint32_t node, begin, end;
  };
  std::vector<Range> level{{0, 0, static_cast<std::uint32_t>(order.size())}};
  for (std::size_t d = 0; d < depth; ++d) {
    std::vector<Range> next;
    next.reserve(level.size());
    for (const Range& r : level) {
      tree.first_child_[r.node] = static_cast<std::uint32_t>(tree.tokens_.size());
      std::uint32_t i = r.begin;
      while (i < r.end) {
        const int tok = identifiers[order[i]][d];
        std::uint32_t j = i + 1;
        while (j < r.end && identifiers[order[j]][d] == tok) ++j;
        const auto child = static_cast<std::uint32_t>(tree.tokens_.size());
        tree.tokens_.push_back(tok);
        tree.first_child_.push_back(0);
        tree.child_count_.push_back(0);
        tree.items_.push_back(-1);
        ++tree.child_count_[r.node];
        next.push_back({child, i, j});
        i = j;
      }
    }
    level = std::move(next);
  }
  for (const Range& r : level) {
    if (r.end - r.begin != 1) {
      std::string id;
      for (int t : identifiers[order[r.begin]]) id += (id.empty() ? "" : ",") + std::to_string(t);
      throw std::invalid_argument("build_prefix_tree: duplicate identifier (" + id + ")");
    }
    const std::uint32_t idx = order[r.begin];
    tree.items_[r.node] = item_ids.empty() ? static_cast<int>(idx) : item_ids[idx];
    tree.first_child_[r.node] = static_cast<std::uint32_t>(tree.tokens_.size());
  }
  tree.leaves_ = level.size();
  return tree;
}

std::span<const int> PrefixTree::child_tokens(int node) const {
  const auto n = static_cast<std::size_t>(node);
  return {tokens_.data() + first_child_[n], child_count_[n]};
}

int PrefixTree::child(int node, int token) const {
  const auto kids = child_tokens(node);
  const auto it = std::lower_bound(kids.begin(), kids.end(), token);
  if (it == kids.end() || *it != token) return kNoNode;
  return static_cast<int>(first_child_[static_cast<std::size_t>(node)] + static_cast<std::size_t>(it - kids.begin()));
}

int PrefixTree::walk(std::span<const int> prefix) const {
  if (prefix.size() > depth_) return kNoNode;
  int node = root();
  for (int t : prefix) {
    node = child(node, t);
    if (node == kNoNode) return kNoNode;
  }
  return node;
}

std::size_t PrefixTree::accepted_length(std::span<const int> seq) const {
  int node = root();
  std::size_t n = 0;
  for (int t : seq) {
    if (n >= depth_) break;
    node = child(node, t);
    if (node == kNoNode) break;
    ++n;
  }
  return n;
}

int PrefixTree::lookup(std::span<const int> identifier) const {
  if (identifier.size() != depth_ || empty()) return -1;
  const int node = walk(identifier);
  return node == kNoNode ? -1 : item(node);
}

std::vector<int> PrefixTree::allowed_next(std::span<const int> prefix) const {
  const int node = walk(prefix);
  if (node == kNoNode) throw std::invalid_argument("allowed_next: prefix is not a path in the prefix tree");
  const auto kids = child_tokens(node);
  return {kids.begin(), kids.end()};
}

PrefixTree build_prefix_tree(const std::vector<std::vector<int>>& identifiers, const model::VocabLayout& layout) {
  std::vector<std::vector<int>> tokens;
  tokens.reserve(identifiers.size());
  for (const auto& id : identifiers) {
    if (id.size() != layout.length()) {
      throw std::invalid_argument("build_prefix_tree: identifier length " + std::to_string(id.size()) +
                                  " does not match layout length " + std::to_string(layout.length()));
    }
    tokens.push_back(layout.to_tokens(id));
  }
  return PrefixTree::build(tokens);
}

}  // namespace decode
ACE_NAMESPACE_END
