#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ace/model/vocab_layout.hpp"
#include "ace/tensor/ops.hpp"
#include "ace/tensor/optim.hpp"

ACE_NAMESPACE_BEGIN
namespace model {

enum class GateMode { kSelfGate, kLiteral };
/// kVanillaCross replaces the fusion sublayer with one cross-attention
/// over the last encoder layer.
enum class FusionMode { kFusion, kVanillaCross };

std::string gate_mode_name(GateMode mode);
GateMode parse_gate_mode(const std::string& name);
std::string fusion_mode_name(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& name);

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 3;
  double dropout_rate = 0.1;
  std::size_t query_vocab_size = 2048;
  std::size_t max_len = 64;
  GateMode gate_mode = GateMode::kSelfGate;
  FusionMode fusion_mode = FusionMode::kFusion;
  VocabLayout layout;

  void validate() const;
};

/// E_1..E_S, each [B, L, d_model], plus the valid length of every query.
struct EncoderOutputs {
  std::vector<Tensor> layers;
  std::vector<std::size_t> lengths;

  std::size_t batch() const { return layers.front().dim(0); }
};

struct CoarseFusionParams {
  Tensor w;  ///< [S*d, d]
  Tensor b;  ///< [d]
  Tensor wq, wk, wv;
};

struct FineFusionParams {
  std::vector<Tensor> wq, wk, wv;
  std::vector<Tensor> w;  ///< each [2d, d]
  std::vector<Tensor> b;  ///< each [d]
};

/// Keys and values of one attention over an encoder-derived memory.
struct KeyValue {
  Tensor k;
  Tensor v;
};

KeyValue coarse_memory(const std::vector<Tensor>& encoder_layers, const CoarseFusionParams& p);
Tensor coarse_attend(const Tensor& y, const KeyValue& memory, const CoarseFusionParams& p, std::size_t n_layers,
                     std::size_t heads, GateMode gate, const std::vector<std::size_t>& key_lengths);
/// Z = [E_1..E_S] W + b, C = attention(Y Wq, Z Wk, Z Wv),
/// G = C * sigmoid(C) / S (self gate) or sigmoid(C) / S (literal).
Tensor coarse_fuse(const Tensor& y, const std::vector<Tensor>& encoder_layers, const CoarseFusionParams& p,
                   std::size_t heads, GateMode gate, const std::vector<std::size_t>& key_lengths = {});

std::vector<KeyValue> fine_memory(const std::vector<Tensor>& encoder_layers, const FineFusionParams& p);
Tensor fine_attend(const Tensor& y, const std::vector<KeyValue>& memory, const FineFusionParams& p, std::size_t heads,
                   const std::vector<std::size_t>& key_lengths);
/// sum_i alpha_i * C_i with C_i = attention over E_i and
/// alpha_i = sigmoid([Y, C_i] W_i + b_i), elementwise.
Tensor fine_fuse(const Tensor& y, const std::vector<Tensor>& encoder_layers, const FineFusionParams& p,
                 std::size_t heads, const std::vector<std::size_t>& key_lengths = {});

/// Per-decoder-layer projections of the encoder outputs, computed once per
/// query and shared by every beam when the batch is 1.
struct DecoderMemory {
  std::vector<KeyValue> coarse;
  std::vector<std::vector<KeyValue>> fine;
  std::vector<KeyValue> cross;
  std::vector<std::size_t> lengths;
  std::size_t batch = 0;
};

/// Incremental decoding state: self-attention key/value cache per layer.
struct DecodeState {
  std::size_t beams = 0;
  std::size_t steps = 0;
  std::vector<std::vector<Real>> keys;
  std::vector<std::vector<Real>> values;
};

class FusionModel {
 public:
  FusionModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Queries may differ in length; shorter ones are padded and masked.
  EncoderOutputs encode(const std::vector<std::vector<int>>& queries, Rng* dropout_rng = nullptr) const;
  DecoderMemory memory(const EncoderOutputs& encoded) const;

  CoarseFusionParams coarse_params(std::size_t layer) const;
  FineFusionParams fine_params(std::size_t layer) const;

  /// prefixes: decoder token ids, each starting with BOS, uniform length.
  /// Returns logits [B, L, vocab]. Memory batch must be B or 1.
  Tensor decoder_forward(const std::vector<std::vector<int>>& prefixes, const DecoderMemory& memory,
                         Rng* dropout_rng = nullptr) const;

  DecodeState start_decoding(std::size_t beams) const;
  /// Feeds one token per beam and returns next-token logits [beams, vocab].
  /// Bitwise equal to the matching rows of decoder_forward with dropout off.
  Tensor decode_step(DecodeState& state, std::span<const int> tokens, const DecoderMemory& memory) const;
  /// Keeps beam parents[i] as new beam i.
  void reorder(DecodeState& state, std::span<const std::size_t> parents) const;

  std::size_t parameter_count() const { return params_.scalar_count(); }

 private:
  Tensor maybe_dropout(const Tensor& x, Rng* rng) const;
  Tensor ffn(const std::string& prefix, const Tensor& x) const;
  Tensor ln(const std::string& prefix, const Tensor& x) const;
  Tensor fusion_sublayer(std::size_t layer, const Tensor& u, const DecoderMemory& memory) const;

  ModelConfig config_;
  ParameterStore params_;
};

/// Learnable scalar count implied by a configuration.
std::size_t count_params(const ModelConfig& config);

}  // namespace model
ACE_NAMESPACE_END
