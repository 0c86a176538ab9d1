#include "ace/model/vocab_layout.hpp"

#include <stdexcept>

ACE_NAMESPACE_BEGIN
namespace model {

std::size_t VocabLayout::offset(std::size_t position) const {
  if (position > sizes.size()) throw std::out_of_range("VocabLayout: position out of range");
  std::size_t total = 0;
  for (std::size_t p = 0; p < position; ++p) total += sizes[p];
  return total;
}

std::size_t VocabLayout::bos() const { return offset(sizes.size()); }

int VocabLayout::to_token(std::size_t position, int value) const {
  if (position >= sizes.size()) throw std::invalid_argument("VocabLayout: position " + std::to_string(position) + " out of range");
  if (value < 0 || static_cast<std::size_t>(value) >= sizes[position]) {
    throw std::invalid_argument("VocabLayout: value " + std::to_string(value) + " outside [0, " +
                                std::to_string(sizes[position]) + ") at position " + std::to_string(position));
  }
  return static_cast<int>(offset(position)) + value;
}

bool VocabLayout::token_in_position(std::size_t position, int token) const {
  if (position >= sizes.size() || token < 0) return false;
  const std::size_t begin = offset(position);
  return static_cast<std::size_t>(token) >= begin && static_cast<std::size_t>(token) < begin + sizes[position];
}

int VocabLayout::to_value(std::size_t position, int token) const {
  if (!token_in_position(position, token)) {
    throw std::invalid_argument("VocabLayout: token " + std::to_string(token) + " is not valid at position " +
                                std::to_string(position));
  }
  return token - static_cast<int>(offset(position));
}

std::vector<int> VocabLayout::to_tokens(const std::vector<int>& values) const {
  if (values.size() != sizes.size()) {
    throw std::invalid_argument("VocabLayout: identifier length " + std::to_string(values.size()) + " != " +
                                std::to_string(sizes.size()));
  }
  std::vector<int> out(values.size());
  for (std::size_t p = 0; p < values.size(); ++p) out[p] = to_token(p, values[p]);
  return out;
}

std::vector<int> VocabLayout::to_values(const std::vector<int>& tokens) const {
  if (tokens.size() != sizes.size()) {
    throw std::invalid_argument("VocabLayout: identifier length " + std::to_string(tokens.size()) + " != " +
                                std::to_string(sizes.size()));
  }
  std::vector<int> out(tokens.size());
  for (std::size_t p = 0; p < tokens.size(); ++p) out[p] = to_value(p, tokens[p]);
  return out;
}

std::uint64_t VocabLayout::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t s : sizes) {
    for (int b = 0; b < 8; ++b) {
      h ^= (static_cast<std::uint64_t>(s) >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string VocabLayout::describe() const {
  std::string out = "[";
  for (std::size_t p = 0; p < sizes.size(); ++p) out += (p ? "," : "") + std::to_string(sizes[p]);
  return out + "]+BOS";
}

}  // namespace model
ACE_NAMESPACE_END
