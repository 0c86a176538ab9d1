#pragma once

#include <string>
#include <vector>

#include "ace/eval/bench.hpp"
#include "ace/model/fusion_model.hpp"

ACE_NAMESPACE_BEGIN
namespace eval {

enum class Engine { kGenerative, kDualTower };

std::string engine_name(Engine engine);
Engine parse_engine(const std::string& name);

struct ThroughputConfig {
  std::vector<std::size_t> candidates{10000, 100000, 1000000};
  std::vector<Engine> engines{Engine::kGenerative, Engine::kDualTower};
  BenchOptions options;
  std::size_t beam = 5;
  std::size_t top_k = 10;
  std::size_t dim = 64;  // dual-tower embedding dim
  std::size_t query_pool = 256;
  std::size_t query_len = 4;
  /// Generative model; its layout is replaced by [k, n, n, u] below.
  model::ModelConfig model;
  std::size_t k = 128;
  std::size_t codebook_size = 128;
  std::size_t unique_slots = 8;
};

/// Synthetic candidates per count: random distinct identifiers in a prefix
/// tree for the generative engine (model weights are random, decoding cost
/// does not depend on them) and random unit vectors for the dual tower.
std::vector<BenchRow> throughput_bench(const ThroughputConfig& config, std::uint64_t seed);

}  // namespace eval
ACE_NAMESPACE_END
