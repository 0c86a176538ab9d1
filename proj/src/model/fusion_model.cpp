#include "ace/model/fusion_model.hpp"

#include <stdexcept>

ACE_NAMESPACE_BEGIN
namespace model {

namespace {

std::string key(const std::string& prefix, const std::string& name) { return prefix + "." + name; }
std::string enc(std::size_t i) { return "enc." + std::to_string(i); }
std::string dec(std::size_t i) { return "dec." + std::to_string(i); }

Tensor project3(const Tensor& x, const Tensor& w) { return matmul(x, w); }

AttentionOptions attn_options(std::size_t heads, bool causal, const std::vector<std::size_t>& lengths) {
  AttentionOptions opt;
  opt.heads = heads;
  opt.causal = causal;
  opt.key_lengths = lengths;
  return opt;
}

}  // namespace

std::string gate_mode_name(GateMode mode) { return mode == GateMode::kSelfGate ? "self_gate" : "literal"; }

GateMode parse_gate_mode(const std::string& name) {
  if (name == "self_gate") return GateMode::kSelfGate;
  if (name == "literal") return GateMode::kLiteral;
  throw std::invalid_argument("unknown gate mode '" + name + "'");
}

std::string fusion_mode_name(FusionMode mode) { return mode == FusionMode::kFusion ? "fusion" : "vanilla_cross"; }

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "fusion") return FusionMode::kFusion;
  if (name == "vanilla_cross") return FusionMode::kVanillaCross;
  throw std::invalid_argument("unknown fusion mode '" + name + "'");
}

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) + " must be a positive multiple of n_heads " +
                                std::to_string(n_heads));
  }
  if (encoder_layers < 1) throw std::invalid_argument("ModelConfig: need at least one encoder layer");
  if (decoder_layers < 1) throw std::invalid_argument("ModelConfig: need at least one decoder layer");
  if (ffn_dim == 0 || query_vocab_size == 0 || max_len == 0) throw std::invalid_argument("ModelConfig: sizes must be positive");
  if (!(dropout_rate >= 0) || dropout_rate >= 1) throw std::invalid_argument("ModelConfig: dropout_rate must be in [0, 1)");
  if (layout.sizes.empty()) throw std::invalid_argument("ModelConfig: empty vocabulary layout");
  if (layout.length() + 1 > max_len) throw std::invalid_argument("ModelConfig: identifier longer than max_len");
}

KeyValue coarse_memory(const std::vector<Tensor>& encoder_layers, const CoarseFusionParams& p) {
  const Tensor z = add(matmul(concat_last(encoder_layers), p.w), p.b);
  return {project3(z, p.wk), project3(z, p.wv)};
}

Tensor coarse_attend(const Tensor& y, const KeyValue& memory, const CoarseFusionParams& p, std::size_t n_layers,
                     std::size_t heads, GateMode gate, const std::vector<std::size_t>& key_lengths) {
  const Tensor c = attention(project3(y, p.wq), memory.k, memory.v, attn_options(heads, false, key_lengths));
  const Real inv_s = Real(1) / static_cast<Real>(n_layers);
  if (gate == GateMode::kSelfGate) return scale(mul(c, sigmoid(c)), inv_s);
  return scale(sigmoid(c), inv_s);
}

Tensor coarse_fuse(const Tensor& y, const std::vector<Tensor>& encoder_layers, const CoarseFusionParams& p,
                   std::size_t heads, GateMode gate, const std::vector<std::size_t>& key_lengths) {
  return coarse_attend(y, coarse_memory(encoder_layers, p), p, encoder_layers.size(), heads, gate, key_lengths);
}

std::vector<KeyValue> fine_memory(const std::vector<Tensor>& encoder_layers, const FineFusionParams& p) {
  if (p.wk.size() != encoder_layers.size()) {
    throw std::invalid_argument("fine_fuse: shape mismatch: " + std::to_string(p.wk.size()) + " parameter sets for " +
                                std::to_string(encoder_layers.size()) + " encoder layers");
  }
  std::vector<KeyValue> out;
  for (std::size_t i = 0; i < encoder_layers.size(); ++i) {
    out.push_back({project3(encoder_layers[i], p.wk[i]), project3(encoder_layers[i], p.wv[i])});
  }
  return out;
}

Tensor fine_attend(const Tensor& y, const std::vector<KeyValue>& memory, const FineFusionParams& p, std::size_t heads,
                   const std::vector<std::size_t>& key_lengths) {
  Tensor total;
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const Tensor c = attention(project3(y, p.wq[i]), memory[i].k, memory[i].v, attn_options(heads, false, key_lengths));
    const Tensor alpha = sigmoid(add(matmul(concat_last({y, c}), p.w[i]), p.b[i]));
    const Tensor term = mul(alpha, c);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor fine_fuse(const Tensor& y, const std::vector<Tensor>& encoder_layers, const FineFusionParams& p,
                 std::size_t heads, const std::vector<std::size_t>& key_lengths) {
  return fine_attend(y, fine_memory(encoder_layers, p), p, heads, key_lengths);
}

FusionModel::FusionModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(seed, {100});
  const std::size_t d = config_.d_model, f = config_.ffn_dim, s = config_.encoder_layers;
  const std::size_t vocab = config_.layout.total();
  auto ln_params = [&](const std::string& prefix) {
    params_.create(key(prefix, "g"), {d}, Init::kOnes, rng);
    params_.create(key(prefix, "b"), {d}, Init::kZeros, rng);
  };
  auto ffn_params = [&](const std::string& prefix) {
    params_.create(key(prefix, "ffn.w1"), {d, f}, Init::kXavierUniform, rng);
    params_.create(key(prefix, "ffn.b1"), {f}, Init::kZeros, rng);
    params_.create(key(prefix, "ffn.w2"), {f, d}, Init::kXavierUniform, rng);
    params_.create(key(prefix, "ffn.b2"), {d}, Init::kZeros, rng);
  };
  auto qkv = [&](const std::string& prefix) {
    params_.create(key(prefix, "wq"), {d, d}, Init::kXavierUniform, rng);
    params_.create(key(prefix, "wk"), {d, d}, Init::kXavierUniform, rng);
    params_.create(key(prefix, "wv"), {d, d}, Init::kXavierUniform, rng);
  };

  params_.create("enc.tok", {config_.query_vocab_size, d}, Init::kXavierUniform, rng);
  params_.create("enc.pos", {config_.max_len, d}, Init::kXavierUniform, rng);
  for (std::size_t i = 0; i < s; ++i) {
    ln_params(key(enc(i), "ln1"));
    qkv(key(enc(i), "attn"));
    ln_params(key(enc(i), "ln2"));
    ffn_params(enc(i));
    ln_params(key(enc(i), "out"));
  }
  params_.create("dec.tok", {vocab, d}, Init::kXavierUniform, rng);
  params_.create("dec.pos", {config_.max_len, d}, Init::kXavierUniform, rng);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    ln_params(key(dec(l), "ln1"));
    qkv(key(dec(l), "self"));
    ln_params(key(dec(l), "ln2"));
    if (config_.fusion_mode == FusionMode::kFusion) {
      params_.create(key(dec(l), "coarse.w"), {s * d, d}, Init::kXavierUniform, rng);
      params_.create(key(dec(l), "coarse.b"), {d}, Init::kZeros, rng);
      qkv(key(dec(l), "coarse"));
      for (std::size_t i = 0; i < s; ++i) {
        const std::string fp = key(dec(l), "fine." + std::to_string(i));
        qkv(fp);
        params_.create(key(fp, "w"), {2 * d, d}, Init::kXavierUniform, rng);
        params_.create(key(fp, "b"), {d}, Init::kZeros, rng);
      }
    } else {
      qkv(key(dec(l), "cross"));
    }
    ln_params(key(dec(l), "ln3"));
    ffn_params(dec(l));
  }
  ln_params("dec.final");
  params_.create("out.w", {d, vocab}, Init::kXavierUniform, rng);
  params_.create("out.b", {vocab}, Init::kZeros, rng);
}

Tensor FusionModel::maybe_dropout(const Tensor& x, Rng* rng) const {
  if (rng == nullptr || config_.dropout_rate == 0) return x;
  return dropout(x, static_cast<Real>(config_.dropout_rate), *rng);
}

Tensor FusionModel::ln(const std::string& prefix, const Tensor& x) const {
  return layer_norm(x, params_.get(key(prefix, "g")), params_.get(key(prefix, "b")));
}

Tensor FusionModel::ffn(const std::string& prefix, const Tensor& x) const {
  const Tensor h = elu(add(matmul(x, params_.get(key(prefix, "ffn.w1"))), params_.get(key(prefix, "ffn.b1"))));
  return add(matmul(h, params_.get(key(prefix, "ffn.w2"))), params_.get(key(prefix, "ffn.b2")));
}

EncoderOutputs FusionModel::encode(const std::vector<std::vector<int>>& queries, Rng* dropout_rng) const {
  if (queries.empty()) throw std::invalid_argument("encode: empty batch");
  std::size_t max_len = 0;
  EncoderOutputs out;
  for (const auto& q : queries) {
    if (q.empty()) throw std::invalid_argument("encode: empty query");
    if (q.size() > config_.max_len) {
      throw std::invalid_argument("encode: query length " + std::to_string(q.size()) + " exceeds max_len " +
                                  std::to_string(config_.max_len));
    }
    for (int t : q) {
      if (t < 0 || static_cast<std::size_t>(t) >= config_.query_vocab_size) {
        throw std::invalid_argument("encode: token " + std::to_string(t) + " outside query vocabulary of size " +
                                    std::to_string(config_.query_vocab_size));
      }
    }
    max_len = std::max(max_len, q.size());
    out.lengths.push_back(q.size());
  }
  const std::size_t batch = queries.size(), d = config_.d_model;
  std::vector<int> ids(batch * max_len, 0), pos(batch * max_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < max_len; ++t) {
      ids[b * max_len + t] = t < queries[b].size() ? queries[b][t] : 0;
      pos[b * max_len + t] = static_cast<int>(t);
    }
  }
  Tensor x = add(index_rows(params_.get("enc.tok"), ids), index_rows(params_.get("enc.pos"), pos));
  x = maybe_dropout(reshape(x, {batch, max_len, d}), dropout_rng);
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string p = enc(i);
    const Tensor h = ln(key(p, "ln1"), x);
    const Tensor a = attention(project3(h, params_.get(key(p, "attn.wq"))), project3(h, params_.get(key(p, "attn.wk"))),
                               project3(h, params_.get(key(p, "attn.wv"))),
                               attn_options(config_.n_heads, false, out.lengths));
    x = add(x, maybe_dropout(a, dropout_rng));
    x = add(x, maybe_dropout(ffn(p, ln(key(p, "ln2"), x)), dropout_rng));
    out.layers.push_back(ln(key(p, "out"), x));
  }
  return out;
}

CoarseFusionParams FusionModel::coarse_params(std::size_t layer) const {
  const std::string p = dec(layer);
  return {params_.get(key(p, "coarse.w")), params_.get(key(p, "coarse.b")), params_.get(key(p, "coarse.wq")),
          params_.get(key(p, "coarse.wk")), params_.get(key(p, "coarse.wv"))};
}

FineFusionParams FusionModel::fine_params(std::size_t layer) const {
  FineFusionParams out;
  for (std::size_t i = 0; i < config_.encoder_layers; ++i) {
    const std::string fp = key(dec(layer), "fine." + std::to_string(i));
    out.wq.push_back(params_.get(key(fp, "wq")));
    out.wk.push_back(params_.get(key(fp, "wk")));
    out.wv.push_back(params_.get(key(fp, "wv")));
    out.w.push_back(params_.get(key(fp, "w")));
    out.b.push_back(params_.get(key(fp, "b")));
  }
  return out;
}

DecoderMemory FusionModel::memory(const EncoderOutputs& encoded) const {
  if (encoded.layers.size() != config_.encoder_layers) {
    throw std::invalid_argument("memory: expected " + std::to_string(config_.encoder_layers) + " encoder layers, got " +
                                std::to_string(encoded.layers.size()));
  }
  DecoderMemory m;
  m.lengths = encoded.lengths;
  m.batch = encoded.batch();
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    if (config_.fusion_mode == FusionMode::kFusion) {
      m.coarse.push_back(coarse_memory(encoded.layers, coarse_params(l)));
      m.fine.push_back(fine_memory(encoded.layers, fine_params(l)));
    } else {
      const std::string p = key(dec(l), "cross");
      const Tensor& last = encoded.layers.back();
      m.cross.push_back({project3(last, params_.get(key(p, "wk"))), project3(last, params_.get(key(p, "wv")))});
    }
  }
  return m;
}

Tensor FusionModel::fusion_sublayer(std::size_t layer, const Tensor& u, const DecoderMemory& memory) const {
  if (config_.fusion_mode == FusionMode::kVanillaCross) {
    const Tensor q = project3(u, params_.get(key(key(dec(layer), "cross"), "wq")));
    return attention(q, memory.cross[layer].k, memory.cross[layer].v, attn_options(config_.n_heads, false, memory.lengths));
  }
  const Tensor coarse = coarse_attend(u, memory.coarse[layer], coarse_params(layer), config_.encoder_layers,
                                      config_.n_heads, config_.gate_mode, memory.lengths);
  const Tensor fine = fine_attend(u, memory.fine[layer], fine_params(layer), config_.n_heads, memory.lengths);
  return add(coarse, fine);
}

Tensor FusionModel::decoder_forward(const std::vector<std::vector<int>>& prefixes, const DecoderMemory& memory,
                                    Rng* dropout_rng) const {
  if (prefixes.empty()) throw std::invalid_argument("decoder_forward: empty batch");
  const std::size_t batch = prefixes.size(), len = prefixes.front().size(), d = config_.d_model;
  if (len == 0) throw std::invalid_argument("decoder_forward: empty prefix");
  if (len > config_.max_len) throw std::invalid_argument("decoder_forward: prefix longer than max_len");
  if (memory.batch != batch && memory.batch != 1) {
    throw std::invalid_argument("decoder_forward: memory batch " + std::to_string(memory.batch) + " for " +
                                std::to_string(batch) + " prefixes");
  }
  const int bos = static_cast<int>(config_.layout.bos());
  const int vocab = static_cast<int>(config_.layout.total());
  std::vector<int> ids, pos;
  ids.reserve(batch * len);
  for (const auto& p : prefixes) {
    if (p.size() != len) throw std::invalid_argument("decoder_forward: prefixes must share one length");
    if (p.front() != bos) throw std::invalid_argument("decoder_forward: prefix must start with BOS");
    for (std::size_t t = 0; t < len; ++t) {
      if (p[t] < 0 || p[t] >= vocab) throw std::invalid_argument("decoder_forward: token " + std::to_string(p[t]) + " out of range");
      ids.push_back(p[t]);
      pos.push_back(static_cast<int>(t));
    }
  }
  Tensor y = add(index_rows(params_.get("dec.tok"), ids), index_rows(params_.get("dec.pos"), pos));
  y = maybe_dropout(reshape(y, {batch, len, d}), dropout_rng);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = dec(l);
    const Tensor h = ln(key(p, "ln1"), y);
    const Tensor a = attention(project3(h, params_.get(key(p, "self.wq"))), project3(h, params_.get(key(p, "self.wk"))),
                               project3(h, params_.get(key(p, "self.wv"))), attn_options(config_.n_heads, true, {}));
    y = add(y, maybe_dropout(a, dropout_rng));
    y = add(y, maybe_dropout(fusion_sublayer(l, ln(key(p, "ln2"), y), memory), dropout_rng));
    y = add(y, maybe_dropout(ffn(p, ln(key(p, "ln3"), y)), dropout_rng));
  }
  y = ln("dec.final", y);
  return add(matmul(y, params_.get("out.w")), params_.get("out.b"));
}

DecodeState FusionModel::start_decoding(std::size_t beams) const {
  DecodeState s;
  s.beams = beams;
  s.keys.assign(config_.decoder_layers, {});
  s.values.assign(config_.decoder_layers, {});
  return s;
}

Tensor FusionModel::decode_step(DecodeState& state, std::span<const int> tokens, const DecoderMemory& memory) const {
  NoGradGuard guard;
  const std::size_t beams = state.beams, d = config_.d_model, t = state.steps;
  if (tokens.size() != beams) throw std::invalid_argument("decode_step: one token per beam required");
  if (t >= config_.max_len) throw std::invalid_argument("decode_step: exceeded max_len");
  if (memory.batch != beams && memory.batch != 1) throw std::invalid_argument("decode_step: memory batch mismatch");
  std::vector<int> ids(tokens.begin(), tokens.end()), pos(beams, static_cast<int>(t));
  Tensor y = reshape(add(index_rows(params_.get("dec.tok"), ids), index_rows(params_.get("dec.pos"), pos)), {beams, 1, d});
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const std::string p = dec(l);
    const Tensor h = ln(key(p, "ln1"), y);
    const Tensor q = project3(h, params_.get(key(p, "self.wq")));
    const Tensor k_new = project3(h, params_.get(key(p, "self.wk")));
    const Tensor v_new = project3(h, params_.get(key(p, "self.wv")));
    auto append = [&](std::vector<Real>& cache, const Tensor& fresh) {
      std::vector<Real> grown(beams * (t + 1) * d);
      for (std::size_t b = 0; b < beams; ++b) {
        std::copy_n(cache.begin() + static_cast<std::ptrdiff_t>(b * t * d), t * d,
                    grown.begin() + static_cast<std::ptrdiff_t>(b * (t + 1) * d));
        std::copy_n(fresh.data().begin() + static_cast<std::ptrdiff_t>(b * d), d,
                    grown.begin() + static_cast<std::ptrdiff_t>((b * (t + 1) + t) * d));
      }
      cache = std::move(grown);
    };
    append(state.keys[l], k_new);
    append(state.values[l], v_new);
    const Tensor keys({beams, t + 1, d}, state.keys[l]);
    const Tensor values({beams, t + 1, d}, state.values[l]);
    y = add(y, attention(q, keys, values, attn_options(config_.n_heads, false, {})));
    y = add(y, fusion_sublayer(l, ln(key(p, "ln2"), y), memory));
    y = add(y, ffn(p, ln(key(p, "ln3"), y)));
  }
  y = ln("dec.final", y);
  ++state.steps;
  return reshape(add(matmul(y, params_.get("out.w")), params_.get("out.b")), {beams, config_.layout.total()});
}

void FusionModel::reorder(DecodeState& state, std::span<const std::size_t> parents) const {
  const std::size_t d = config_.d_model, t = state.steps, row = t * d;
  for (std::size_t p : parents) {
    if (p >= state.beams) throw std::invalid_argument("reorder: parent index out of range");
  }
  auto gather = [&](std::vector<Real>& cache) {
    std::vector<Real> out(parents.size() * row);
    for (std::size_t i = 0; i < parents.size(); ++i) {
      std::copy_n(cache.begin() + static_cast<std::ptrdiff_t>(parents[i] * row), row,
                  out.begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    cache = std::move(out);
  };
  for (auto& c : state.keys) gather(c);
  for (auto& c : state.values) gather(c);
  state.beams = parents.size();
}

std::size_t count_params(const ModelConfig& config) {
  const std::size_t d = config.d_model, f = config.ffn_dim, s = config.encoder_layers;
  const std::size_t vocab = config.layout.total();
  const std::size_t ln = 2 * d, qkv = 3 * d * d, ffn = d * f + f + f * d + d;
  std::size_t total = config.query_vocab_size * d + config.max_len * d;
  total += s * (ln + qkv + ln + ffn + ln);
  total += vocab * d + config.max_len * d;
  std::size_t fusion = 0;
  if (config.fusion_mode == FusionMode::kFusion) {
    fusion = s * d * d + d + qkv + s * (qkv + 2 * d * d + d);
  } else {
    fusion = qkv;
  }
  total += config.decoder_layers * (ln + qkv + ln + fusion + ln + ffn);
  total += ln + d * vocab + vocab;
  return total;
}

}  // namespace model
ACE_NAMESPACE_END
