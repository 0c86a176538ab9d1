#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ace/data/synth.hpp"
#include "ace/ids/identifiers.hpp"
#include "ace/model/fusion_model.hpp"
#include "ace/train/trainer.hpp"
#include "json.hpp"

namespace ace::cli {

struct DecodeSection {
  std::size_t beam = 5;
  bool constrained = true;
};

struct EvalSection {
  std::vector<std::size_t> beams{5, 25, 50};
  std::string split = "test";
};

struct BenchSection {
  std::vector<std::size_t> candidates{10000, 100000, 1000000};
  std::vector<std::string> engines{"generative", "dual_tower"};
  std::size_t concurrency = 100;
  std::size_t workers = 0;
  double warmup_s = 0.5;
  double duration_s = 2.0;
  std::size_t beam = 5;
  std::size_t top_k = 10;
  std::size_t dim = 64;
  std::size_t k = 128;
  std::size_t codebook_size = 128;
};

/// Effective configuration of one command. Every field has a default except
/// the seed.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  data::CorpusConfig corpus;
  data::QueryConfig queries;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  ids::IdentifierConfig identifier;
  model::ModelConfig model;
  train::TrainConfig train;
  DecodeSection decode;
  EvalSection eval;
  BenchSection bench;
};

/// One JSON-addressable field: section.key, bound to a RunConfig member.
struct Field {
  std::string section;
  std::string key;
  std::function<nlohmann::ordered_json()> get;
  std::function<void(const nlohmann::json&)> set;
};

std::vector<Field> fields(RunConfig& config);

/// Applies a JSON document on top of `config`. Unknown sections or keys and
/// ill-typed values throw std::invalid_argument naming the offending path.
void apply_json(RunConfig& config, const nlohmann::json& doc);
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace ace::cli
