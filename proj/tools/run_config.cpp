#include "run_config.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace ace::cli {

namespace {

template <typename T>
Field bind_field(const std::string& section, const std::string& key, T& ref) {
  return Field{section, key, [&ref] { return nlohmann::ordered_json(ref); },
               [&ref](const nlohmann::json& j) { ref = j.get<T>(); }};
}

template <typename T>
Field bind_enum(const std::string& section, const std::string& key, T& ref, std::string (*name)(T),
                 T (*parse)(const std::string&)) {
  return Field{section, key, [&ref, name] { return nlohmann::ordered_json(name(ref)); },
               [&ref, parse](const nlohmann::json& j) { ref = parse(j.get<std::string>()); }};
}

}  // namespace

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(bind_field("data", "items", c.corpus.n_items));
  f.push_back(bind_field("data", "concepts", c.corpus.n_concepts));
  f.push_back(bind_field("data", "dim", c.corpus.dim));
  f.push_back(bind_field("data", "noise_sigma", c.corpus.noise_sigma));
  f.push_back(bind_field("data", "spread", c.corpus.spread));
  f.push_back(bind_field("data", "queries_per_item", c.queries.queries_per_item));
  f.push_back(bind_field("data", "phrase_len", c.queries.phrase_len));
  f.push_back(bind_field("data", "noise_rate", c.queries.noise_rate));
  f.push_back(bind_field("data", "vocab_size", c.queries.vocab_size));
  f.push_back(bind_field("data", "split", c.split));

  auto& r = c.identifier.rqvae;
  f.push_back(bind_enum("identifier", "mode", c.identifier.mode, &ids::mode_name, &ids::parse_mode));
  f.push_back(bind_field("identifier", "k", c.identifier.k));
  f.push_back(bind_field("identifier", "kmeans_iters", c.identifier.kmeans_iters));
  f.push_back(bind_field("identifier", "kmeans_batch", c.identifier.kmeans_batch));
  f.push_back(bind_field("identifier", "codebooks", r.n_codebooks));
  f.push_back(bind_field("identifier", "codebook_size", r.codebook_size));
  f.push_back(bind_field("identifier", "hidden", r.hidden));
  f.push_back(bind_field("identifier", "latent_dim", r.latent_dim));
  f.push_back(bind_field("identifier", "alpha", r.alpha));
  f.push_back(bind_field("identifier", "beta", r.beta));
  f.push_back(bind_field("identifier", "epochs", r.epochs));
  f.push_back(bind_field("identifier", "batch_size", r.batch_size));
  f.push_back(bind_field("identifier", "lr_init", r.lr_init));
  f.push_back(bind_field("identifier", "lr_peak", r.lr_peak));
  f.push_back(bind_field("identifier", "warmup_fraction", r.warmup_fraction));
  f.push_back(bind_field("identifier", "dead_restart_steps", r.dead_restart_steps));

  f.push_back(bind_field("model", "d_model", c.model.d_model));
  f.push_back(bind_field("model", "heads", c.model.n_heads));
  f.push_back(bind_field("model", "ffn_dim", c.model.ffn_dim));
  f.push_back(bind_field("model", "encoder_layers", c.model.encoder_layers));
  f.push_back(bind_field("model", "decoder_layers", c.model.decoder_layers));
  f.push_back(bind_field("model", "dropout", c.model.dropout_rate));
  f.push_back(bind_field("model", "max_len", c.model.max_len));
  f.push_back(bind_enum("model", "gate", c.model.gate_mode, &model::gate_mode_name, &model::parse_gate_mode));
  f.push_back(bind_enum("model", "fusion", c.model.fusion_mode, &model::fusion_mode_name, &model::parse_fusion_mode));

  f.push_back(bind_field("train", "epochs", c.train.epochs));
  f.push_back(bind_field("train", "batch_size", c.train.batch_size));
  f.push_back(bind_field("train", "omega", c.train.omega));
  f.push_back(bind_field("train", "lr_init", c.train.lr_init));
  f.push_back(bind_field("train", "lr_peak", c.train.lr_peak));
  f.push_back(bind_field("train", "warmup_epochs", c.train.warmup_epochs));
  f.push_back(bind_field("train", "restore_best", c.train.restore_best));

  f.push_back(bind_field("decode", "beam", c.decode.beam));
  f.push_back(bind_field("decode", "constrained", c.decode.constrained));

  f.push_back(bind_field("eval", "beams", c.eval.beams));
  f.push_back(bind_field("eval", "split", c.eval.split));

  f.push_back(bind_field("bench", "candidates", c.bench.candidates));
  f.push_back(bind_field("bench", "engines", c.bench.engines));
  f.push_back(bind_field("bench", "concurrency", c.bench.concurrency));
  f.push_back(bind_field("bench", "workers", c.bench.workers));
  f.push_back(bind_field("bench", "warmup_s", c.bench.warmup_s));
  f.push_back(bind_field("bench", "duration_s", c.bench.duration_s));
  f.push_back(bind_field("bench", "beam", c.bench.beam));
  f.push_back(bind_field("bench", "top_k", c.bench.top_k));
  f.push_back(bind_field("bench", "dim", c.bench.dim));
  f.push_back(bind_field("bench", "k", c.bench.k));
  f.push_back(bind_field("bench", "codebook_size", c.bench.codebook_size));
  return f;
}

void apply_json(RunConfig& config, const nlohmann::json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("config: top level must be an object");
  auto all = fields(config);
  std::set<std::string> sections;
  for (const auto& f : all) sections.insert(f.section);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() == "seed") {
      if (!it.value().is_number_unsigned()) throw std::invalid_argument("config: seed must be a non-negative integer");
      config.seed = it.value().get<std::uint64_t>();
      continue;
    }
    if (!sections.count(it.key())) throw std::invalid_argument("config: unknown key '" + it.key() + "'");
    if (!it.value().is_object()) throw std::invalid_argument("config: section '" + it.key() + "' must be an object");
    for (auto kv = it.value().begin(); kv != it.value().end(); ++kv) {
      auto match = std::find_if(all.begin(), all.end(),
                                [&](const Field& f) { return f.section == it.key() && f.key == kv.key(); });
      if (match == all.end()) throw std::invalid_argument("config: unknown key '" + it.key() + "." + kv.key() + "'");
      try {
        match->set(kv.value());
      } catch (const std::exception& e) {
        throw std::invalid_argument("config: bad value for '" + it.key() + "." + kv.key() + "': " + e.what());
      }
    }
  }
}

nlohmann::ordered_json to_json(const RunConfig& config) {
  RunConfig copy = config;
  nlohmann::ordered_json j;
  if (copy.seed) j["seed"] = *copy.seed;
  for (const auto& f : fields(copy)) j[f.section][f.key] = f.get();
  return j;
}

}  // namespace ace::cli
