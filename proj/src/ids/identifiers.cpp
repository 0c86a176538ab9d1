#include "ace/ids/identifiers.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "ace/data/io.hpp"
#include "json.hpp"

ACE_NAMESPACE_BEGIN
namespace ids {

std::string mode_name(IdentifierMode mode) {
  switch (mode) {
    case IdentifierMode::kCoarseFine:
      return "coarse_fine";
    case IdentifierMode::kNoKMeans:
      return "no_kmeans";
    case IdentifierMode::kHierarchicalKMeans:
      return "hierarchical_kmeans";
  }
  return "coarse_fine";
}

IdentifierMode parse_mode(const std::string& name) {
  if (name == "coarse_fine") return IdentifierMode::kCoarseFine;
  if (name == "no_kmeans") return IdentifierMode::kNoKMeans;
  if (name == "hierarchical_kmeans") return IdentifierMode::kHierarchicalKMeans;
  throw std::invalid_argument("unknown identifier mode '" + name + "'");
}

int IdTable::item_of(const std::vector<int>& identifier) const {
  auto it = reverse.find(identifier);
  return it == reverse.end() ? -1 : it->second;
}

UniqueAssignment assign_unique_tokens(const std::vector<std::vector<int>>& prefixes, std::size_t cap) {
  UniqueAssignment out;
  out.identifiers.reserve(prefixes.size());
  for (std::size_t item = 0; item < prefixes.size(); ++item) {
    int& counter = out.table.counters[prefixes[item]];
    if (static_cast<std::size_t>(counter) >= cap) {
      throw std::invalid_argument("assign_unique_tokens: more than " + std::to_string(cap) +
                                  " items share one identifier prefix");
    }
    std::vector<int> id = prefixes[item];
    id.push_back(counter++);
    out.table.reverse.emplace(id, static_cast<int>(item));
    out.identifiers.push_back(std::move(id));
  }
  return out;
}

std::uint64_t prefix_capacity(const IdentifierConfig& config) {
  std::uint64_t fine = 1;
  for (std::size_t m = 0; m < config.rqvae.n_codebooks; ++m) fine *= config.rqvae.codebook_size;
  return config.mode == IdentifierMode::kNoKMeans ? fine : fine * config.k;
}

model::VocabLayout layout_for(const IdentifierConfig& config, const std::vector<std::vector<int>>& identifiers) {
  model::VocabLayout layout;
  if (config.mode != IdentifierMode::kNoKMeans) layout.sizes.push_back(config.k);
  for (std::size_t m = 0; m < config.rqvae.n_codebooks; ++m) layout.sizes.push_back(config.rqvae.codebook_size);
  int max_u = 0;
  for (const auto& id : identifiers) {
    if (id.size() != layout.sizes.size() + 1) throw std::invalid_argument("layout_for: identifier length mismatch");
    max_u = std::max(max_u, id.back());
  }
  layout.sizes.push_back(static_cast<std::size_t>(max_u) + 1);
  return layout;
}

std::vector<std::vector<int>> hierarchical_kmeans_paths(const Matrix& x, std::size_t k, std::size_t branch,
                                                        std::size_t depth, std::size_t n_iters, std::size_t batch,
                                                        std::uint64_t seed) {
  std::vector<std::vector<int>> paths(x.rows);
  struct Group {
    std::vector<std::size_t> members;
    std::uint64_t stream;
  };
  std::vector<Group> groups{{std::vector<std::size_t>(x.rows), 0}};
  std::iota(groups[0].members.begin(), groups[0].members.end(), 0);
  for (std::size_t level = 0; level <= depth; ++level) {
    const std::size_t width = level == 0 ? k : branch;
    std::vector<Group> next;
    for (const Group& g : groups) {
      std::vector<int> labels(g.members.size());
      if (g.members.size() <= width) {
        std::iota(labels.begin(), labels.end(), 0);
      } else {
        Matrix sub(g.members.size(), x.cols);
        for (std::size_t i = 0; i < g.members.size(); ++i) {
          std::copy(x.row(g.members[i]).begin(), x.row(g.members[i]).end(), sub.row(i).begin());
        }
        const KMeansModel km = kmeans_fit(sub, width, n_iters, batch, seed ^ (g.stream * 0x9e3779b97f4a7c15ull + level));
        labels = kmeans_assign(km, sub);
      }
      std::vector<Group> children(width);
      for (std::size_t c = 0; c < width; ++c) children[c].stream = g.stream * width + c + 1;
      for (std::size_t i = 0; i < g.members.size(); ++i) {
        paths[g.members[i]].push_back(labels[i]);
        children[static_cast<std::size_t>(labels[i])].members.push_back(g.members[i]);
      }
      for (auto& c : children) {
        if (!c.members.empty()) next.push_back(std::move(c));
      }
    }
    groups = std::move(next);
  }
  return paths;
}

IdentifierBuild build_identifiers(const Matrix& embeddings, const IdentifierConfig& config, std::uint64_t seed) {
  if (embeddings.rows == 0) throw std::invalid_argument("build_identifiers: empty corpus");
  IdentifierBuild out;
  out.config = config;
  std::vector<std::vector<int>> prefixes(embeddings.rows);

  if (config.mode == IdentifierMode::kHierarchicalKMeans) {
    prefixes = hierarchical_kmeans_paths(embeddings, config.k, config.rqvae.codebook_size, config.rqvae.n_codebooks,
                                         config.kmeans_iters, config.kmeans_batch, Rng::derive(seed, {30}).next_u64());
  } else {
    std::vector<int> coarse;
    if (config.mode == IdentifierMode::kCoarseFine) {
      if (embeddings.rows < config.k) {
        throw std::invalid_argument("build_identifiers: need n >= K, got n=" + std::to_string(embeddings.rows) +
                                    " K=" + std::to_string(config.k));
      }
      out.kmeans = kmeans_fit(embeddings, config.k, config.kmeans_iters, config.kmeans_batch,
                              Rng::derive(seed, {10}).next_u64());
      coarse = kmeans_assign(*out.kmeans, embeddings);
      out.quantizer_input = center_residuals(embeddings, *out.kmeans, coarse);
    } else {
      out.quantizer_input = embeddings;
    }
    const std::uint64_t rq_seed = Rng::derive(seed, {20}).next_u64();
    out.rqvae.emplace(embeddings.cols, config.rqvae, rq_seed);
    out.rqvae_log = train_rqvae(*out.rqvae, out.quantizer_input, rq_seed);
    const auto fine = out.rqvae->quantize_all(out.quantizer_input);
    for (std::size_t i = 0; i < embeddings.rows; ++i) {
      if (!coarse.empty()) prefixes[i].push_back(coarse[i]);
      prefixes[i].insert(prefixes[i].end(), fine[i].begin(), fine[i].end());
    }
  }

  UniqueAssignment unique = assign_unique_tokens(prefixes);
  out.identifiers = std::move(unique.identifiers);
  out.table = std::move(unique.table);
  out.layout = layout_for(config, out.identifiers);
  return out;
}

void write_identifiers(const std::filesystem::path& path, const std::vector<std::vector<int>>& identifiers) {
  std::string text;
  for (std::size_t i = 0; i < identifiers.size(); ++i) {
    nlohmann::ordered_json line;
    line["item_id"] = i;
    line["tokens"] = identifiers[i];
    text += line.dump();
    text += '\n';
  }
  data::write_text_file(path, text);
}

std::vector<std::vector<int>> read_identifiers(const std::filesystem::path& path) {
  const std::string text = data::read_text_file(path);
  std::vector<std::vector<int>> out;
  std::vector<bool> seen;
  std::size_t length = 0;
  std::size_t offset = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(offset, end - offset);
    if (!line.empty()) {
      int item = -1;
      std::vector<int> tokens;
      try {
        const auto j = nlohmann::json::parse(line);
        item = j.at("item_id").get<int>();
        tokens = j.at("tokens").get<std::vector<int>>();
      } catch (const std::exception& e) {
        throw FormatError("bad identifier record in " + path.string() + ": " + e.what(), offset);
      }
      if (item < 0) throw FormatError("negative item_id in " + path.string(), offset);
      if (static_cast<std::size_t>(item) >= out.size()) {
        out.resize(static_cast<std::size_t>(item) + 1);
        seen.resize(out.size(), false);
      }
      if (seen[static_cast<std::size_t>(item)]) throw FormatError("duplicate item_id " + std::to_string(item), offset);
      if (tokens.empty()) throw FormatError("empty identifier for item " + std::to_string(item), offset);
      if (length == 0) length = tokens.size();
      if (tokens.size() != length) throw FormatError("identifier lengths differ", offset);
      seen[static_cast<std::size_t>(item)] = true;
      out[static_cast<std::size_t>(item)] = std::move(tokens);
    }
    offset = end + 1;
  }
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) throw FormatError("identifier file " + path.string() + " has no entry for item " + std::to_string(i), text.size());
  }
  return out;
}

std::uint64_t identifier_fingerprint(const std::vector<std::vector<int>>& identifiers) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(identifiers.size());
  for (const auto& id : identifiers) {
    mix(id.size());
    for (int t : id) mix(static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)));
  }
  return h;
}

}  // namespace ids
ACE_NAMESPACE_END
