#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ace/data/io.hpp"
#include "ace/decode/beam_search.hpp"
#include "ace/decode/prefix_tree.hpp"
#include "ace/eval/experiment.hpp"
#include "ace/eval/metrics.hpp"
#include "ace/eval/throughput.hpp"
#include "ace/ids/identifiers.hpp"
#include "ace/tensor/container.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ace;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void write_json(const fs::path& path, const json& j) { data::write_text_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(data::read_text_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("bad JSON in " + path.string() + ": " + e.what());
  }
}

/// Flags bound to config fields as strings so that defaults print from the
/// field itself and only flags actually given override the config file.
struct FieldFlag {
  std::string section, key;
  std::string value;
  CLI::Option* option = nullptr;
};

json parse_flag_value(const json& like, const std::string& text, const std::string& flag) {
  auto scalar = [&](const json& proto, const std::string& s) -> json {
    if (proto.is_string()) return s;
    json v;
    try {
      v = json::parse(s);
    } catch (const json::exception&) {
      throw UsageError(flag + ": cannot parse '" + s + "'");
    }
    if (proto.is_boolean() && !v.is_boolean()) throw UsageError(flag + ": expected true or false, got '" + s + "'");
    if (proto.is_number() && !v.is_number()) throw UsageError(flag + ": expected a number, got '" + s + "'");
    if (proto.is_number_unsigned() && !v.is_number_unsigned()) {
      throw UsageError(flag + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
  };
  if (!like.is_array()) return scalar(like, text);
  json out = json::array();
  const json proto = like.empty() ? json("") : like.front();
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(scalar(proto, part));
  return out;
}

class Command {
 public:
  Command(CLI::App& app, const std::string& name, const std::string& help) : sub_(app.add_subcommand(name, help)) {}

  CLI::App* app() { return sub_; }

  void field(const std::string& flag, const std::string& section, const std::string& key, const std::string& help) {
    auto all = cli::fields(defaults_);
    auto it = std::find_if(all.begin(), all.end(), [&](const cli::Field& f) { return f.section == section && f.key == key; });
    if (it == all.end()) throw std::logic_error("no config field " + section + "." + key);
    auto& f = flags_.emplace_back(FieldFlag{section, key, "", nullptr});
    f.option = sub_->add_option("--" + flag, f.value, help + " [" + section + "." + key + "]");
    const json d = it->get();
    std::string shown;
    if (d.is_array()) {
      for (std::size_t i = 0; i < d.size(); ++i) shown += (i ? "," : "") + (d[i].is_string() ? d[i].get<std::string>() : d[i].dump());
    } else {
      shown = d.is_string() ? d.get<std::string>() : d.dump();
    }
    f.option->default_str(shown);
    const json& proto = d.is_array() && !d.empty() ? d.front() : d;
    std::string type = proto.is_boolean() ? "BOOL" : proto.is_number_unsigned() ? "UINT" : proto.is_number() ? "FLOAT" : "TEXT";
    f.option->type_name(d.is_array() ? type + ",..." : type);
  }

  void apply_flags(cli::RunConfig& config) {
    auto all = cli::fields(config);
    for (const auto& f : flags_) {
      if (f.option->count() == 0) continue;
      auto it = std::find_if(all.begin(), all.end(), [&](const cli::Field& x) { return x.section == f.section && x.key == f.key; });
      const json value = parse_flag_value(it->get(), f.value, f.option->get_name());
      try {
        it->set(value);
      } catch (const std::exception& e) {
        throw UsageError(f.option->get_name() + ": " + e.what());
      }
    }
  }

 private:
  CLI::App* sub_;
  cli::RunConfig defaults_;
  std::deque<FieldFlag> flags_;
};

struct Globals {
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> seed_opts;
  std::string config;
  std::string out;
  bool quiet = false;

  // Accepted before or after the subcommand name.
  void add_to(CLI::App* app) {
    seed_opts.push_back(app->add_option("--seed", seed, "Random seed (required, or \"seed\" in --config)"));
    app->add_option("--config", config, "JSON run configuration; command-line flags override it");
    app->add_option("--out", out, "Output directory");
    app->add_flag("--quiet", quiet, "Suppress progress output on stderr");
  }
  bool seed_given() const {
    return std::any_of(seed_opts.begin(), seed_opts.end(), [](CLI::Option* o) { return o->count() > 0; });
  }
};

void validate(const cli::RunConfig& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw UsageError(std::string(name) + " must be positive");
  };
  positive(c.corpus.n_items, "data.items");
  positive(c.corpus.n_concepts, "data.concepts");
  positive(c.corpus.dim, "data.dim");
  positive(c.queries.queries_per_item, "data.queries_per_item");
  positive(c.queries.phrase_len, "data.phrase_len");
  positive(c.queries.vocab_size, "data.vocab_size");
  if (c.corpus.n_concepts > c.corpus.n_items) throw UsageError("data.concepts must not exceed data.items");
  if (!(c.queries.noise_rate >= 0 && c.queries.noise_rate <= 1)) throw UsageError("data.noise_rate must be in [0, 1]");
  if (!(c.corpus.noise_sigma >= 0)) throw UsageError("data.noise_sigma must be non-negative");
  for (double f : c.split) {
    if (!(f >= 0)) throw UsageError("data.split fractions must be non-negative");
  }
  if (!(c.split[0] > 0)) throw UsageError("data.split needs a positive train fraction");
  positive(c.identifier.k, "identifier.k");
  positive(c.identifier.rqvae.n_codebooks, "identifier.codebooks");
  positive(c.identifier.rqvae.codebook_size, "identifier.codebook_size");
  positive(c.identifier.rqvae.latent_dim, "identifier.latent_dim");
  positive(c.identifier.rqvae.batch_size, "identifier.batch_size");
  positive(c.model.d_model, "model.d_model");
  positive(c.model.n_heads, "model.heads");
  if (c.model.d_model % c.model.n_heads != 0) throw UsageError("model.d_model must be divisible by model.heads");
  positive(c.model.encoder_layers, "model.encoder_layers");
  positive(c.model.decoder_layers, "model.decoder_layers");
  if (!(c.model.dropout_rate >= 0 && c.model.dropout_rate < 1)) throw UsageError("model.dropout must be in [0, 1)");
  positive(c.train.batch_size, "train.batch_size");
  if (!(c.train.omega >= 0)) throw UsageError("train.omega must be non-negative");
  if (!(c.train.lr_peak > 0) || !(c.train.lr_init > 0)) throw UsageError("train learning rates must be positive");
  positive(c.decode.beam, "decode.beam");
  if (c.eval.beams.empty()) throw UsageError("eval.beams must not be empty");
  for (std::size_t b : c.eval.beams) positive(b, "eval.beams entries");
  try {
    data::parse_split(c.eval.split);
  } catch (const std::exception& e) {
    throw UsageError(std::string("eval.split: ") + e.what());
  }
  if (c.bench.candidates.empty()) throw UsageError("bench.candidates must not be empty");
  for (std::size_t n : c.bench.candidates) positive(n, "bench.candidates entries");
  for (const auto& e : c.bench.engines) {
    try {
      eval::parse_engine(e);
    } catch (const std::exception& ex) {
      throw UsageError(std::string("bench.engines: ") + ex.what());
    }
  }
  positive(c.bench.concurrency, "bench.concurrency");
  positive(c.bench.beam, "bench.beam");
  if (!(c.bench.duration_s > 0)) throw UsageError("bench.duration_s must be positive");
}

class Log {
 public:
  explicit Log(bool quiet) : quiet_(quiet) {}
  template <typename... A>
  void operator()(const A&... parts) const {
    if (quiet_) return;
    (std::cerr << ... << parts) << "\n";
  }

 private:
  bool quiet_;
};

fs::path require_dir_arg(const std::string& value, const std::string& flag) {
  if (value.empty()) throw UsageError(flag + " is required");
  return value;
}

fs::path prepare_out(const Globals& g, bool required) {
  if (g.out.empty()) {
    if (required) throw UsageError("--out is required for this command");
    return {};
  }
  fs::create_directories(g.out);
  return g.out;
}

void echo_config(const fs::path& out, const cli::RunConfig& config) {
  if (!out.empty()) write_json(out / "config.json", cli::to_json(config));
}

// ---- file bundles exchanged between stages ----

struct IdsBundle {
  std::vector<std::vector<int>> identifiers;
  model::VocabLayout layout;
  fs::path file;
};

IdsBundle load_ids(const fs::path& dir) {
  IdsBundle b;
  b.file = dir / "identifiers.jsonl";
  b.identifiers = ids::read_identifiers(b.file);
  const json layout = read_json(dir / "layout.json");
  b.layout.sizes = layout.at("sizes").get<std::vector<std::size_t>>();
  for (const auto& id : b.identifiers) {
    if (id.size() != b.layout.length()) throw std::runtime_error("identifier length does not match " + (dir / "layout.json").string());
    for (std::size_t p = 0; p < id.size(); ++p) {
      if (id[p] < 0 || static_cast<std::size_t>(id[p]) >= b.layout.sizes[p]) {
        throw std::runtime_error("identifier value outside layout " + (dir / "layout.json").string());
      }
    }
  }
  return b;
}

struct ModelBundle {
  model::FusionModel model;
  json sidecar;
  fs::path file;
};

ModelBundle load_model(const fs::path& dir) {
  const fs::path file = dir / "model.ckpt";
  nlohmann::json sidecar;
  model::FusionModel m = train::load_checkpoint(file, &sidecar);
  return {std::move(m), json(sidecar), file};
}

void check_compatible(const ModelBundle& m, const IdsBundle& ids) {
  const std::string ckpt_layout = hex(m.model.config().layout.fingerprint());
  const std::string ckpt_ids = m.sidecar.value("identifier_fingerprint", std::string("unknown"));
  const std::string file_layout = hex(ids.layout.fingerprint());
  const std::string file_ids = hex(ids::identifier_fingerprint(ids.identifiers));
  if (ckpt_layout != file_layout || ckpt_ids != file_ids) {
    throw std::runtime_error("layout mismatch: checkpoint " + m.file.string() + " has layout fingerprint " + ckpt_layout +
                             " (identifiers " + ckpt_ids + "), identifier file " + ids.file.string() +
                             " has layout fingerprint " + file_layout + " (identifiers " + file_ids + ")");
  }
}

ids::IdentifierBuild as_build(const IdsBundle& b) {
  ids::IdentifierBuild build;
  build.identifiers = b.identifiers;
  build.layout = b.layout;
  return build;
}

std::vector<int> raw_identifier(const model::VocabLayout& layout, const std::vector<int>& tokens) {
  std::vector<int> raw(tokens.size());
  for (std::size_t p = 0; p < tokens.size(); ++p) raw[p] = tokens[p] - static_cast<int>(layout.offset(p));
  return raw;
}

// ---- commands ----

int cmd_gen_data(const cli::RunConfig& c, const Globals& g) {
  const fs::path out = prepare_out(g, true);
  const Log log(g.quiet);
  const std::uint64_t seed = *c.seed;
  const data::Corpus corpus = data::generate_corpus(c.corpus, seed);
  const auto queries = data::split_queries(data::generate_queries(corpus, c.queries, seed), c.split, seed);
  data::write_embeddings(out / "embeddings.bin", corpus.embeddings());
  data::write_queries(out / "queries.jsonl", queries);
  std::map<std::string, std::size_t> counts{{"train", 0}, {"val", 0}, {"test", 0}};
  for (const auto& q : queries) ++counts[data::split_name(q.split)];
  json manifest;
  manifest["seed"] = seed;
  manifest["items"] = corpus.items.size();
  manifest["concepts"] = c.corpus.n_concepts;
  manifest["dim"] = corpus.dim;
  manifest["query_vocab_size"] = c.queries.vocab_size;
  manifest["queries"] = queries.size();
  manifest["splits"] = {{"train", counts["train"]}, {"val", counts["val"]}, {"test", counts["test"]}};
  manifest["concept_ids"] = corpus.concept_ids();
  write_json(out / "manifest.json", manifest);
  echo_config(out, c);
  log("gen-data: ", corpus.items.size(), " items, ", queries.size(), " queries (train ", counts["train"], ", val ",
      counts["val"], ", test ", counts["test"], ") -> ", out.string());
  return 0;
}

int cmd_build_ids(const cli::RunConfig& c, const Globals& g, const std::string& data_dir) {
  const fs::path in = require_dir_arg(data_dir, "--data");
  const fs::path out = prepare_out(g, true);
  const Log log(g.quiet);
  const Matrix embeddings = data::read_embeddings(in / "embeddings.bin");
  log("build-ids: ", embeddings.rows, " embeddings, mode ", ids::mode_name(c.identifier.mode));
  const ids::IdentifierBuild build = ids::build_identifiers(embeddings, c.identifier, *c.seed);

  ids::write_identifiers(out / "identifiers.jsonl", build.identifiers);
  json layout;
  layout["sizes"] = build.layout.sizes;
  layout["layout_fingerprint"] = hex(build.layout.fingerprint());
  layout["identifier_fingerprint"] = hex(ids::identifier_fingerprint(build.identifiers));
  write_json(out / "layout.json", layout);

  std::vector<NamedTensor> pipeline;
  if (build.kmeans) {
    const Matrix& centers = build.kmeans->centers;
    pipeline.push_back({"kmeans.centers", {centers.rows, centers.cols}, centers.values});
  }
  if (build.rqvae) {
    for (auto& t : export_parameters(build.rqvae->params(), "rqvae.")) pipeline.push_back(std::move(t));
  }
  write_container(out / "pipeline.ckpt", pipeline);

  json usage;
  usage["items"] = build.identifiers.size();
  usage["mode"] = ids::mode_name(c.identifier.mode);
  usage["layout"] = build.layout.sizes;
  usage["prefix_capacity"] = ids::prefix_capacity(c.identifier);
  std::size_t collided = 0;
  int max_u = 0;
  for (const auto& id : build.identifiers) {
    collided += id.back() > 0;
    max_u = std::max(max_u, id.back());
  }
  usage["items_with_nonzero_unique_token"] = collided;
  usage["max_unique_token"] = max_u;
  usage["distinct_prefixes"] = build.table.counters.size();
  if (build.rqvae) {
    const ids::CodebookUsage stats = ids::codebook_usage_stats(*build.rqvae, build.quantizer_input);
    usage["codebook_counts"] = stats.counts;
    usage["dead_entries"] = stats.dead;
    usage["restarts"] = build.rqvae->restarts();
    if (!build.rqvae_log.empty()) {
      const auto& last = build.rqvae_log.back().train;
      usage["rqvae_final"] = {{"recon", last.recon}, {"commit", last.commit}, {"total", last.total}};
    }
  }
  write_json(out / "usage.json", usage);
  echo_config(out, c);
  log("build-ids: ", build.identifiers.size(), " unique identifiers, layout fingerprint ", hex(build.layout.fingerprint()),
      " -> ", out.string());
  return 0;
}

int cmd_train(const cli::RunConfig& c, const Globals& g, const std::string& data_dir, const std::string& ids_dir) {
  const fs::path din = require_dir_arg(data_dir, "--data");
  const fs::path iin = require_dir_arg(ids_dir, "--ids");
  const fs::path out = prepare_out(g, true);
  const Log log(g.quiet);
  const json manifest = read_json(din / "manifest.json");
  const auto queries = data::read_queries(din / "queries.jsonl");
  const IdsBundle ids = load_ids(iin);
  const ids::IdentifierBuild build = as_build(ids);
  const auto train_set = eval::make_examples(queries, build, data::Split::kTrain);
  const auto val_set = eval::make_examples(queries, build, data::Split::kVal);

  model::ModelConfig mc = c.model;
  mc.layout = ids.layout;
  mc.query_vocab_size = manifest.at("query_vocab_size").get<std::size_t>();
  model::FusionModel model(mc, *c.seed);
  train::TrainConfig tc = c.train;
  tc.seed = *c.seed;
  log("train: ", train_set.size(), " train / ", val_set.size(), " val examples, ", model.params().scalar_count(),
      " parameters");

  std::ofstream epochs(out / "epochs.jsonl");
  if (!epochs) throw std::runtime_error("cannot write " + (out / "epochs.jsonl").string());
  const auto result = train::train_loop(model, train_set, val_set, tc, [&](const train::EpochLog& e) {
    json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["ce"] = e.ce;
    j["kl"] = e.kl;
    j["val_nll"] = e.val_nll;
    j["lr"] = e.lr;
    j["seconds"] = e.seconds;
    epochs << j.dump() << "\n" << std::flush;
    log("epoch ", e.epoch, " loss ", e.loss, " ce ", e.ce, " kl ", e.kl, " val ", e.val_nll);
  });

  json extra;
  extra["identifier_fingerprint"] = hex(ids::identifier_fingerprint(ids.identifiers));
  extra["seed"] = *c.seed;
  extra["best_epoch"] = result.best_epoch;
  extra["best_val_nll"] = result.best_val_nll;
  train::save_checkpoint(model, out / "model.ckpt", extra);
  echo_config(out, c);
  log("train: best epoch ", result.best_epoch, " val nll ", result.best_val_nll, " -> ", out.string());
  return 0;
}

int cmd_retrieve(const cli::RunConfig& c, const Globals& g, const std::string& model_dir, const std::string& ids_dir,
                 const std::vector<int>& query) {
  const ModelBundle m = load_model(require_dir_arg(model_dir, "--model"));
  const IdsBundle ids = load_ids(require_dir_arg(ids_dir, "--ids"));
  check_compatible(m, ids);
  if (query.empty()) throw UsageError("--query-tokens is required");
  const fs::path out = prepare_out(g, false);
  const decode::PrefixTree tree = decode::build_prefix_tree(ids.identifiers, ids.layout);
  const auto ranked = c.decode.constrained ? decode::constrained_beam_search(m.model, query, tree, c.decode.beam)
                                           : decode::unconstrained_beam_search(m.model, query, c.decode.beam, &tree);
  json j;
  j["seed"] = *c.seed;
  j["query_tokens"] = query;
  j["beam"] = c.decode.beam;
  j["constrained"] = c.decode.constrained;
  json results = json::array();
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    json r;
    r["rank"] = i + 1;
    r["item_id"] = ranked[i].item_id;
    r["score"] = ranked[i].score;
    r["identifier"] = raw_identifier(ids.layout, ranked[i].tokens);
    results.push_back(r);
  }
  j["results"] = results;
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) {
    write_json(out / "retrieve.json", j);
    echo_config(out, c);
  }
  return 0;
}

int cmd_eval(const cli::RunConfig& c, const Globals& g, const std::string& model_dir, const std::string& ids_dir,
             const std::string& data_dir) {
  const ModelBundle m = load_model(require_dir_arg(model_dir, "--model"));
  const IdsBundle ids = load_ids(require_dir_arg(ids_dir, "--ids"));
  check_compatible(m, ids);
  const auto queries = data::read_queries(require_dir_arg(data_dir, "--data") / "queries.jsonl");
  const fs::path out = prepare_out(g, false);
  const Log log(g.quiet);
  const decode::PrefixTree tree = decode::build_prefix_tree(ids.identifiers, ids.layout);
  const auto examples = eval::make_examples(queries, as_build(ids), data::parse_split(c.eval.split));
  if (examples.empty()) throw std::runtime_error("no " + c.eval.split + " queries in " + data_dir);
  auto reports = eval::run_eval(m.model, tree, examples, c.eval.beams, c.decode.constrained, c.eval.split);
  const std::string fingerprint = hex(fnv1a(cli::to_json(c).dump() + m.sidecar.dump()));
  for (auto& r : reports) r.fingerprint = fingerprint;
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(eval::to_json(r));
  std::cout << arr.dump(2) << "\n";
  log(eval::reports_table(reports));
  if (!out.empty()) {
    write_json(out / "eval.json", arr);
    data::write_text_file(out / "eval.csv", eval::reports_csv(reports));
    echo_config(out, c);
  }
  return 0;
}

int cmd_bench(const cli::RunConfig& c, const Globals& g) {
  const fs::path out = prepare_out(g, false);
  const Log log(g.quiet);
  eval::ThroughputConfig tc;
  tc.candidates = c.bench.candidates;
  tc.engines.clear();
  for (const auto& e : c.bench.engines) tc.engines.push_back(eval::parse_engine(e));
  tc.options.concurrency = c.bench.concurrency;
  tc.options.workers = c.bench.workers;
  tc.options.warmup_s = c.bench.warmup_s;
  tc.options.duration_s = c.bench.duration_s;
  tc.beam = c.bench.beam;
  tc.top_k = c.bench.top_k;
  tc.dim = c.bench.dim;
  tc.k = c.bench.k;
  tc.codebook_size = c.bench.codebook_size;
  tc.model = c.model;
  log("bench: ", eval::device_description(), ", ", eval::bench_workers(tc.options), " workers");
  const auto rows = eval::throughput_bench(tc, *c.seed);
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(eval::to_json(r));
  std::cout << arr.dump(2) << "\n";
  log(eval::bench_table(rows));
  if (!out.empty()) {
    write_json(out / "bench.json", arr);
    data::write_text_file(out / "bench.csv", eval::bench_csv(rows));
    echo_config(out, c);
  }
  return 0;
}

void error_line(int code, const std::string& kind, const std::string& message) {
  json j;
  j["error"] = kind;
  j["exit_code"] = code;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generative cross-modal retrieval pipeline"};
  app.require_subcommand(1);
  Globals g;
  g.add_to(&app);

  Command gen(app, "gen-data", "Generate the synthetic corpus, queries and split manifest");
  gen.field("items", "data", "items", "Number of corpus items");
  gen.field("concepts", "data", "concepts", "Number of latent concepts");
  gen.field("dim", "data", "dim", "Embedding dimension");
  gen.field("noise-sigma", "data", "noise_sigma", "Per-coordinate embedding noise");
  gen.field("spread", "data", "spread", "Radius of the concept sphere");
  gen.field("queries-per-item", "data", "queries_per_item", "Queries generated per item");
  gen.field("phrase-len", "data", "phrase_len", "Base phrase length in tokens");
  gen.field("noise-rate", "data", "noise_rate", "Per-token replacement probability");
  gen.field("vocab-size", "data", "vocab_size", "Query vocabulary size");
  gen.field("split", "data", "split", "Train,val,test fractions");

  std::string data_dir, ids_dir, model_dir;
  Command bids(app, "build-ids", "Build semantic identifiers from an embedding file");
  bids.app()->add_option("--data", data_dir, "Directory written by gen-data");
  bids.field("mode", "identifier", "mode", "coarse_fine, no_kmeans or hierarchical_kmeans");
  bids.field("k", "identifier", "k", "Coarse clusters K");
  bids.field("codebooks", "identifier", "codebooks", "Residual codebooks M");
  bids.field("codebook-size", "identifier", "codebook_size", "Entries per codebook N");
  bids.field("hidden", "identifier", "hidden", "Autoencoder hidden widths");
  bids.field("latent-dim", "identifier", "latent_dim", "Autoencoder latent width");
  bids.field("alpha", "identifier", "alpha", "Commitment loss weight");
  bids.field("beta", "identifier", "beta", "Encoder-side commitment weight");
  bids.field("epochs", "identifier", "epochs", "Autoencoder epochs");
  bids.field("batch-size", "identifier", "batch_size", "Autoencoder batch size");
  bids.field("lr-init", "identifier", "lr_init", "Autoencoder initial learning rate");
  bids.field("lr-peak", "identifier", "lr_peak", "Autoencoder peak learning rate");
  bids.field("kmeans-iters", "identifier", "kmeans_iters", "K-Means iterations");
  bids.field("kmeans-batch", "identifier", "kmeans_batch", "K-Means mini-batch size");

  Command tr(app, "train", "Train the retrieval model");
  tr.app()->add_option("--data", data_dir, "Directory written by gen-data");
  tr.app()->add_option("--ids", ids_dir, "Directory written by build-ids");
  tr.field("d-model", "model", "d_model", "Model width");
  tr.field("heads", "model", "heads", "Attention heads");
  tr.field("ffn-dim", "model", "ffn_dim", "Feed-forward width");
  tr.field("encoder-layers", "model", "encoder_layers", "Encoder layers S");
  tr.field("decoder-layers", "model", "decoder_layers", "Decoder layers");
  tr.field("dropout", "model", "dropout", "Dropout rate");
  tr.field("gate", "model", "gate", "Coarse gate: self_gate or literal");
  tr.field("fusion", "model", "fusion", "Fusion mode");
  tr.field("epochs", "train", "epochs", "Training epochs");
  tr.field("batch-size", "train", "batch_size", "Batch size");
  tr.field("omega", "train", "omega", "Consistency loss weight");
  tr.field("lr-init", "train", "lr_init", "Initial learning rate");
  tr.field("lr-peak", "train", "lr_peak", "Peak learning rate");
  tr.field("warmup-epochs", "train", "warmup_epochs", "Warm-up epochs");

  std::vector<int> query;
  bool unconstrained = false;
  Command ret(app, "retrieve", "Rank items for one tokenized query");
  ret.app()->add_option("--model", model_dir, "Directory written by train");
  ret.app()->add_option("--ids", ids_dir, "Directory written by build-ids");
  ret.app()->add_option("--query-tokens", query, "Query token ids, comma separated")->delimiter(',');
  ret.field("beam", "decode", "beam", "Beam size");
  ret.app()->add_flag("--unconstrained", unconstrained, "Decode without the prefix tree");

  Command ev(app, "eval", "Recall@k and MRR@10 over a query split");
  ev.app()->add_option("--model", model_dir, "Directory written by train");
  ev.app()->add_option("--ids", ids_dir, "Directory written by build-ids");
  ev.app()->add_option("--data", data_dir, "Directory written by gen-data");
  ev.field("beams", "eval", "beams", "Beam sizes, comma separated");
  ev.field("split", "eval", "split", "train, val or test");
  ev.app()->add_flag("--unconstrained", unconstrained, "Decode without the prefix tree");

  Command bench(app, "bench", "Closed-loop throughput of generative and dual-tower retrieval");
  bench.field("candidates", "bench", "candidates", "Candidate counts, comma separated");
  bench.field("engines", "bench", "engines", "Engines: generative, dual_tower");
  bench.field("concurrency", "bench", "concurrency", "Concurrent clients");
  bench.field("workers", "bench", "workers", "Worker threads (0: ACE_THREADS or hardware threads)");
  bench.field("warmup", "bench", "warmup_s", "Warm-up seconds per row");
  bench.field("duration", "bench", "duration_s", "Measured seconds per row");
  bench.field("beam", "bench", "beam", "Generative beam size");
  bench.field("top-k", "bench", "top_k", "Dual-tower results per query");
  bench.field("dim", "bench", "dim", "Dual-tower embedding dimension");
  bench.field("k", "bench", "k", "Generative coarse clusters");
  bench.field("codebook-size", "bench", "codebook_size", "Generative codebook size");

  for (Command* c : {&gen, &bids, &tr, &ret, &ev, &bench}) g.add_to(c->app());

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_line(2, "usage", e.what());
    return 2;
  }

  Command* active = nullptr;
  for (Command* c : {&gen, &bids, &tr, &ret, &ev, &bench}) {
    if (c->app()->parsed()) active = c;
  }
  const std::string name = active->app()->get_name();

  cli::RunConfig config;
  try {
    if (!g.config.empty()) {
      json doc;
      try {
        doc = json::parse(data::read_text_file(g.config));
      } catch (const json::exception& e) {
        throw UsageError("bad JSON in " + g.config + ": " + e.what());
      } catch (const std::runtime_error& e) {
        throw UsageError(e.what());
      }
      try {
        cli::apply_json(config, doc);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
    active->apply_flags(config);
    if (g.seed_given()) config.seed = g.seed;
    if (!config.seed) throw UsageError("a seed is required (--seed or \"seed\" in --config)");
    if (unconstrained) config.decode.constrained = false;
    validate(config);
  } catch (const UsageError& e) {
    error_line(2, "usage", e.what());
    return 2;
  }

  if (!g.quiet) std::cerr << "config " << cli::to_json(config).dump() << "\n";
  try {
    if (name == "gen-data") return cmd_gen_data(config, g);
    if (name == "build-ids") return cmd_build_ids(config, g, data_dir);
    if (name == "train") return cmd_train(config, g, data_dir, ids_dir);
    if (name == "retrieve") return cmd_retrieve(config, g, model_dir, ids_dir, query);
    if (name == "eval") return cmd_eval(config, g, model_dir, ids_dir, data_dir);
    return cmd_bench(config, g);
  } catch (const UsageError& e) {
    error_line(2, "usage", e.what());
    return 2;
  } catch (const std::exception& e) {
    error_line(1, "runtime", e.what());
    return 1;
  }
}
