#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ace/model/vocab_layout.hpp"

ACE_NAMESPACE_BEGIN
namespace decode {

/// Trie over fixed-length identifiers stored in CSR form: the children of a
/// node are contiguous and sorted by token.
class PrefixTree {
 public:
  static constexpr int kNoNode = -1;

  PrefixTree() = default;
  /// identifiers[i] names item item_ids[i] (or i when item_ids is empty).
  static PrefixTree build(const std::vector<std::vector<int>>& identifiers, const std::vector<int>& item_ids = {});

  std::size_t depth() const { return depth_; }
  std::size_t node_count() const { return tokens_.size(); }
  std::size_t leaf_count() const { return leaves_; }
  bool empty() const { return leaves_ == 0; }

  static constexpr int root() { return 0; }
  std::span<const int> child_tokens(int node) const;
  int first_child(int node) const { return static_cast<int>(first_child_[static_cast<std::size_t>(node)]); }
  int child(int node, int token) const;
  int token(int node) const { return tokens_[static_cast<std::size_t>(node)]; }
  /// Item at a leaf, -1 for inner nodes.
  int item(int node) const { return items_[static_cast<std::size_t>(node)]; }

  /// Node reached by the prefix, or kNoNode.
  int walk(std::span<const int> prefix) const;
  /// Length of the longest accepted prefix of seq.
  std::size_t accepted_length(std::span<const int> seq) const;
  /// Item for a complete identifier, -1 if it is not in the tree.
  int lookup(std::span<const int> identifier) const;
  /// Children tokens in ascending order; throws for an invalid prefix.
  std::vector<int> allowed_next(std::span<const int> prefix) const;

 private:
  std::size_t depth_ = 0;
  std::size_t leaves_ = 0;
  std::vector<int> tokens_;
  std::vector<std::uint32_t> first_child_;
  std::vector<std::uint32_t> child_count_;
  std::vector<int> items_;
};

/// Builds from raw identifier values mapped through the layout.
PrefixTree build_prefix_tree(const std::vector<std::vector<int>>& identifiers, const model::VocabLayout& layout);

}  // namespace decode
ACE_NAMESPACE_END
