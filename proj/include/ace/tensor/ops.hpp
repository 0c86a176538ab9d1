#pragma once

#include <span>
#include <vector>

#include "ace/tensor/rng.hpp"
#include "ace/tensor/tensor.hpp"

ACE_NAMESPACE_BEGIN

// Differentiable operations. Every op validates shapes and throws
// std::invalid_argument naming itself and the offending shapes.
//
// Unless stated otherwise an op treats its input as a matrix of
// rows() x cols(), i.e. all leading axes are flattened.

/// x[..., k] * w[k, n] -> [..., n]
Tensor matmul(const Tensor& x, const Tensor& w);
/// Same-shape sum, or b of shape [cols] broadcast over the rows of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);

Tensor concat(const std::vector<Tensor>& parts, int axis);
inline Tensor concat_last(const std::vector<Tensor>& parts) { return concat(parts, -1); }
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
/// Gathers slices along axis 0. Embedding lookup is index_rows(table, ids).
Tensor index_rows(const Tensor& table, std::span<const int> rows);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor elu(const Tensor& x, Real alpha = Real(1));
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = Real(1e-5));

struct AttentionOptions {
  std::size_t heads = 1;
  /// Query i (of Lq) may see key j (of Lk) iff j <= i + Lk - Lq.
  bool causal = false;
  /// Optional valid key count per key batch; keys at or past it are masked.
  std::vector<std::size_t> key_lengths;
};

/// Multi-head scaled dot-product attention without projections.
/// q: [B, Lq, D], k: [Bk, Lk, D], v: [Bk, Lk, Dv] with Bk equal to B or 1
/// (a single key set shared by every query batch). Returns [B, Lq, Dv].
/// A query row with no visible key produces zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& options);

/// Inverted dropout. rate 0 returns x itself.
Tensor dropout(const Tensor& x, Real rate, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of squared entries.
Tensor sum_squares(const Tensor& x);
/// Mean over rows of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Identity forward; the result is a constant for backward.
Tensor stop_gradient(const Tensor& x);

/// While alive on this thread, stop_gradient either records its outputs or
/// replays previously recorded ones in call order. Finite-difference checks
/// use this to hold stopped values fixed while inputs are perturbed.
class StopGradientTape {
 public:
  enum class Mode { kRecord, kReplay };
  StopGradientTape(Mode mode, std::vector<std::vector<Real>>& values);
  ~StopGradientTape();
  StopGradientTape(const StopGradientTape&) = delete;
  StopGradientTape& operator=(const StopGradientTape&) = delete;

  Mode mode() const { return mode_; }
  std::vector<Real> next(std::span<const Real> x);

 private:
  Mode mode_;
  std::vector<std::vector<Real>>& values_;
  std::size_t cursor_ = 0;
  StopGradientTape* previous_;
};

/// Discrete choices made from differentiable values (argmin indices and
/// similar). Recorded and replayed by an active StopGradientTape like
/// stop_gradient outputs; returned unchanged otherwise.
std::vector<int> hold_choices(std::vector<int> choices);

namespace kernels {

/// C[m, n] = (accumulate ? C : 0) + A[m, k] * B[k, n], all row-major.
/// Each output row is computed by the same instruction sequence whatever m
/// is, so a row's result depends only on that row of A.
void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

void transpose(const Real* src, Real* dst, std::size_t rows, std::size_t cols);

}  // namespace kernels

ACE_NAMESPACE_END
