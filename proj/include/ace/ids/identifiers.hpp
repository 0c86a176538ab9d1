#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ace/ids/kmeans.hpp"
#include "ace/ids/rqvae.hpp"
#include "ace/model/vocab_layout.hpp"

ACE_NAMESPACE_BEGIN
namespace ids {

inline constexpr std::size_t kMaxUniqueCounter = 4096;

enum class IdentifierMode {
  kCoarseFine,          ///< (k, v_1..v_M, u)
  kNoKMeans,            ///< RQ-VAE on raw embeddings, (v_1..v_M, u)
  kHierarchicalKMeans,  ///< recursive K-Means path of depth M + 1, then u
};

std::string mode_name(IdentifierMode mode);
IdentifierMode parse_mode(const std::string& name);

struct IdentifierConfig {
  IdentifierMode mode = IdentifierMode::kCoarseFine;
  std::size_t k = 16;
  std::size_t kmeans_iters = 100;
  std::size_t kmeans_batch = 1024;
  RqVaeConfig rqvae;
};

/// Search-and-count table. counters maps a prefix to its next free counter,
/// reverse maps a full identifier back to its item.
struct IdTable {
  std::map<std::vector<int>, int> counters;
  std::map<std::vector<int>, int> reverse;

  /// -1 when the identifier is unknown.
  int item_of(const std::vector<int>& identifier) const;
};

struct UniqueAssignment {
  std::vector<std::vector<int>> identifiers;
  IdTable table;
};

/// prefixes[i] belongs to item i. The first occurrence of a prefix gets
/// u = 0 and every repeat the next counter. Throws once a counter would
/// reach `cap`.
UniqueAssignment assign_unique_tokens(const std::vector<std::vector<int>>& prefixes,
                                      std::size_t cap = kMaxUniqueCounter);

/// Number of distinct prefixes before the unique token, e.g. K * N^M.
std::uint64_t prefix_capacity(const IdentifierConfig& config);

struct IdentifierBuild {
  IdentifierConfig config;
  std::vector<std::vector<int>> identifiers;
  model::VocabLayout layout;
  IdTable table;
  std::optional<KMeansModel> kmeans;
  std::optional<RqVae> rqvae;
  std::vector<RqVaeEpoch> rqvae_log;
  /// Input to the quantizer (centered residuals or raw embeddings).
  Matrix quantizer_input;
};

/// K-Means -> assign -> center residuals -> RQ-VAE -> quantize -> unique
/// tokens, or one of the ablation variants selected by config.mode.
IdentifierBuild build_identifiers(const Matrix& embeddings, const IdentifierConfig& config, std::uint64_t seed);

/// Recursive clustering path of `depth` levels below a K-way root split.
/// A group with at most `branch` members numbers them directly.
std::vector<std::vector<int>> hierarchical_kmeans_paths(const Matrix& x, std::size_t k, std::size_t branch,
                                                        std::size_t depth, std::size_t n_iters, std::size_t batch,
                                                        std::uint64_t seed);

/// Layout [position sizes] sized to hold every identifier in `identifiers`.
model::VocabLayout layout_for(const IdentifierConfig& config, const std::vector<std::vector<int>>& identifiers);

/// JSON lines {"item_id":int,"tokens":[...]}, raw per-position values.
void write_identifiers(const std::filesystem::path& path, const std::vector<std::vector<int>>& identifiers);
/// Requires item ids 0..n-1, each exactly once, and a uniform length.
std::vector<std::vector<int>> read_identifiers(const std::filesystem::path& path);

/// FNV-1a over the identifier set.
std::uint64_t identifier_fingerprint(const std::vector<std::vector<int>>& identifiers);

}  // namespace ids
ACE_NAMESPACE_END
