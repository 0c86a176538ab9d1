#include "ace/eval/throughput.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <unordered_set>

#include "ace/decode/beam_search.hpp"
#include "ace/tensor/rng.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

std::string engine_name(Engine engine) { return engine == Engine::kGenerative ? "generative" : "dual_tower"; }

Engine parse_engine(const std::string& name) {
  if (name == "generative") return Engine::kGenerative;
  if (name == "dual_tower" || name == "dual-tower") return Engine::kDualTower;
  throw std::invalid_argument("unknown engine '" + name + "' (expected generative or dual-tower)");
}

namespace {

decode::PrefixTree random_tree(const model::VocabLayout& layout, std::size_t n, Rng& rng) {
  std::uint64_t capacity = 1;
  for (std::size_t s : layout.sizes) capacity *= s;
  if (n > capacity) {
    throw std::invalid_argument("throughput_bench: " + std::to_string(n) + " candidates exceed identifier capacity " +
                                std::to_string(capacity));
  }
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(n * 2);
  std::vector<std::vector<int>> ids;
  ids.reserve(n);
  while (ids.size() < n) {
    std::uint64_t code = rng.uniform_int(capacity);
    if (!seen.insert(code).second) continue;
    std::vector<int> id(layout.length());
    for (std::size_t p = layout.length(); p-- > 0;) {
      id[p] = static_cast<int>(code % layout.sizes[p]);
      code /= layout.sizes[p];
    }
    ids.push_back(layout.to_tokens(id));
  }
  return decode::PrefixTree::build(ids);
}

Matrix random_unit_rows(std::size_t n, std::size_t dim, Rng& rng) {
  Matrix m(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = m.row(i);
    double norm = 0.0;
    for (float& x : row) {
      x = static_cast<float>(rng.normal());
      norm += static_cast<double>(x) * x;
    }
    const float inv = static_cast<float>(1.0 / std::sqrt(std::max(norm, 1e-30)));
    for (float& x : row) x *= inv;
  }
  return m;
}

}  // namespace

std::vector<BenchRow> throughput_bench(const ThroughputConfig& config, std::uint64_t seed) {
  if (config.beam == 0 || config.top_k == 0) throw std::invalid_argument("throughput_bench: beam and top_k must be positive");
  if (config.query_pool == 0) throw std::invalid_argument("throughput_bench: query_pool must be positive");
  std::vector<BenchRow> rows;

  std::optional<model::FusionModel> model;
  std::vector<std::vector<int>> token_queries;
  for (Engine e : config.engines) {
    if (e != Engine::kGenerative || model) continue;
    model::ModelConfig mc = config.model;
    mc.layout.sizes = {config.k, config.codebook_size, config.codebook_size, config.unique_slots};
    model.emplace(mc, seed);
    Rng qrng = Rng::derive(seed, {1});
    for (std::size_t q = 0; q < config.query_pool; ++q) {
      std::vector<int> tokens(config.query_len);
      for (int& t : tokens) t = static_cast<int>(qrng.uniform_int(mc.query_vocab_size));
      token_queries.push_back(std::move(tokens));
    }
  }
  Rng vrng = Rng::derive(seed, {2});
  const Matrix vector_queries = random_unit_rows(config.query_pool, config.dim, vrng);

  for (std::size_t n : config.candidates) {
    if (n == 0) throw std::invalid_argument("throughput_bench: candidate count must be positive");
    for (Engine e : config.engines) {
      BenchRow row;
      if (e == Engine::kGenerative) {
        Rng trng = Rng::derive(seed, {3, n});
        const decode::PrefixTree tree = random_tree(model->config().layout, n, trng);
        row = closed_loop(
            [&](std::size_t client, std::uint64_t seq) {
              const auto& q = token_queries[(client + seq * 7919) % token_queries.size()];
              const auto out = decode::constrained_beam_search(*model, q, tree, config.beam);
              if (out.empty()) throw std::logic_error("throughput_bench: empty beam result");
            },
            config.options);
      } else {
        Rng crng = Rng::derive(seed, {4, n});
        const Matrix candidates = random_unit_rows(n, config.dim, crng);
        row = closed_loop(
            [&](std::size_t client, std::uint64_t seq) {
              const auto q = vector_queries.row((client + seq * 7919) % vector_queries.rows);
              const auto out = dual_tower_baseline(q, candidates, config.top_k);
              if (out.empty()) throw std::logic_error("throughput_bench: empty dual-tower result");
            },
            config.options);
      }
      row.engine = engine_name(e);
      row.n_candidates = n;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace eval
ACE_NAMESPACE_END
