#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ace/config.hpp"

ACE_NAMESPACE_BEGIN
namespace model {

/// Decoder output vocabulary: one contiguous, disjoint token range per
/// identifier position, followed by BOS.
/// For the default identifiers the sizes are [K, N, ..., N, U].
struct VocabLayout {
  std::vector<std::size_t> sizes;

  std::size_t length() const { return sizes.size(); }
  std::size_t offset(std::size_t position) const;
  std::size_t bos() const;
  std::size_t total() const { return bos() + 1; }

  /// Raw per-position value -> decoder token id; throws if out of range.
  int to_token(std::size_t position, int value) const;
  int to_value(std::size_t position, int token) const;
  bool token_in_position(std::size_t position, int token) const;
  std::vector<int> to_tokens(const std::vector<int>& values) const;
  std::vector<int> to_values(const std::vector<int>& tokens) const;

  std::uint64_t fingerprint() const;
  std::string describe() const;

  friend bool operator==(const VocabLayout&, const VocabLayout&) = default;
};

}  // namespace model
ACE_NAMESPACE_END
