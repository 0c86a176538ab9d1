#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ace/data/matrix.hpp"
#include "ace/data/synth.hpp"

ACE_NAMESPACE_BEGIN

/// Malformed on-disk container. offset() is the byte position where the
/// problem was detected.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

namespace data {

inline constexpr char kEmbeddingMagic[8] = {'A', 'C', 'E', 'E', 'M', 'B', '0', '1'};
inline constexpr std::size_t kEmbeddingHeaderBytes = 16;

/// "ACEEMB01", u32 LE count, u32 LE dim, count*dim binary32 LE row-major.
void write_embeddings(const std::filesystem::path& path, const Matrix& matrix);
Matrix read_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim = std::nullopt);

/// JSON lines: {"query_id":..,"item_id":..,"split":"train|val|test","tokens":[..]}
void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& records);
std::vector<QueryRecord> read_queries(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace data
ACE_NAMESPACE_END
