#include "ace/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>
#include <string>

ACE_NAMESPACE_BEGIN

namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch: " + detail);
}

std::string shapes(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}

using BackwardFn = std::function<void(TensorNode&)>;

Tensor make_output(Shape shape, std::vector<Real> data, const char* op, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) node->parents.push_back(t.shared_node());
    }
    if (!node->parents.empty()) {
      node->requires_grad = true;
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_output(Shape shape, std::vector<Real> data, const char* op, const std::vector<Tensor>& inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) node->parents.push_back(t.shared_node());
    }
    if (!node->parents.empty()) {
      node->requires_grad = true;
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

std::span<Real> grad_of(const Tensor& t) { return t.node()->grad_buffer(); }

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int idx = axis < 0 ? r + axis : axis;
  if (idx < 0 || idx >= r) throw std::invalid_argument(std::string(op) + ": axis out of range");
  return static_cast<std::size_t>(idx);
}

// Register-tiled product: a tile is kTileRows rows by two 64-byte vectors.
// Every output element is accumulated over k in order with a separate
// multiply and add, in both the vector and the scalar tail paths.
using Vec = Real __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 64 / sizeof(Real);
constexpr std::size_t kVecsPerTile = 2;
constexpr std::size_t kTileCols = kLanes * kVecsPerTile;
constexpr std::size_t kTileRows = 8;

template <std::size_t Rows>
inline void gemm_tile(const Real* a, std::size_t k, const Real* b, std::size_t n, Real* c, bool accumulate) {
  Vec acc[Rows][kVecsPerTile] = {};
  for (std::size_t p = 0; p < k; ++p) {
    Vec bv[kVecsPerTile];
    for (std::size_t v = 0; v < kVecsPerTile; ++v) std::memcpy(&bv[v], b + p * n + v * kLanes, sizeof(Vec));
    for (std::size_t r = 0; r < Rows; ++r) {
      const Real s = a[r * k + p];
      for (std::size_t v = 0; v < kVecsPerTile; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    for (std::size_t v = 0; v < kVecsPerTile; ++v) {
      Real* dst = c + r * n + v * kLanes;
      if (accumulate) {
        Vec cur;
        std::memcpy(&cur, dst, sizeof(Vec));
        cur += acc[r][v];
        std::memcpy(dst, &cur, sizeof(Vec));
      } else {
        std::memcpy(dst, &acc[r][v], sizeof(Vec));
      }
    }
  }
}

template <std::size_t Rows>
inline void gemm_tail(const Real* a, std::size_t k, const Real* b, std::size_t n, Real* c, std::size_t width,
                      bool accumulate) {
  Real acc[Rows][kTileCols];
  for (std::size_t r = 0; r < Rows; ++r)
    for (std::size_t j = 0; j < width; ++j) acc[r][j] = Real(0);
  for (std::size_t p = 0; p < k; ++p) {
    const Real* brow = b + p * n;
    for (std::size_t r = 0; r < Rows; ++r) {
      const Real s = a[r * k + p];
      for (std::size_t j = 0; j < width; ++j) acc[r][j] += s * brow[j];
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    Real* crow = c + r * n;
    for (std::size_t j = 0; j < width; ++j) crow[j] = accumulate ? crow[j] + acc[r][j] : acc[r][j];
  }
}

template <std::size_t Rows>
void gemm_rows(const Real* a, const Real* b, Real* c, std::size_t k, std::size_t n, bool accumulate) {
  std::size_t j0 = 0;
  for (; j0 + kTileCols <= n; j0 += kTileCols) gemm_tile<Rows>(a, k, b + j0, n, c + j0, accumulate);
  if (j0 < n) gemm_tail<Rows>(a, k, b + j0, n, c + j0, n - j0, accumulate);
}

}  // namespace

namespace kernels {

void gemm(const Real* a, const Real* b, Real* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::size_t i = 0;
  for (; i + kTileRows <= m; i += kTileRows) gemm_rows<kTileRows>(a + i * k, b, c + i * n, k, n, accumulate);
  for (; i < m; ++i) gemm_rows<1>(a + i * k, b, c + i * n, k, n, accumulate);
}

void transpose(const Real* src, Real* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    const std::size_t i1 = std::min(rows, i0 + kBlock);
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t j1 = std::min(cols, j0 + kBlock);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

}  // namespace kernels

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (w.rank() != 2 || x.cols() != w.dim(0)) shape_error("matmul", shapes(x, w));
  const std::size_t m = x.rows(), k = w.dim(0), n = w.dim(1);
  std::vector<Real> out(m * n);
  kernels::gemm(x.data().data(), w.data().data(), out.data(), m, k, n, false);
  Shape shape = x.shape();
  shape.back() = n;
  return make_output(std::move(shape), std::move(out), "matmul", {x, w}, [x, w, m, k, n](TensorNode& self) {
    const Real* g = self.grad.data();
    if (x.requires_grad()) {
      std::vector<Real> wt(k * n);
      kernels::transpose(w.data().data(), wt.data(), k, n);
      kernels::gemm(g, wt.data(), grad_of(x).data(), m, n, k, true);
    }
    if (w.requires_grad()) {
      std::vector<Real> xt(m * k);
      kernels::transpose(x.data().data(), xt.data(), m, k);
      kernels::gemm(xt.data(), g, grad_of(w).data(), k, m, n, true);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) {
    std::vector<Real> out(a.numel());
    const auto ad = a.data(), bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
    return make_output(a.shape(), std::move(out), "add", {a, b}, [a, b](TensorNode& self) {
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = grad_of(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (b.rank() == 1 && b.dim(0) == a.cols()) {
    const std::size_t rows = a.rows(), cols = a.cols();
    std::vector<Real> out(a.numel());
    const auto ad = a.data(), bd = b.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = ad[r * cols + c] + bd[c];
    return make_output(a.shape(), std::move(out), "add", {a, b}, [a, b, rows, cols](TensorNode& self) {
      if (a.requires_grad()) {
        auto g = grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (b.requires_grad()) {
        auto g = grad_of(b);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
      }
    });
  }
  shape_error("add", shapes(a, b));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", shapes(a, b));
  std::vector<Real> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return make_output(a.shape(), std::move(out), "sub", {a, b}, [a, b](TensorNode& self) {
    if (a.requires_grad()) {
      auto g = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto g = grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mul", shapes(a, b));
  std::vector<Real> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_output(a.shape(), std::move(out), "mul", {a, b}, [a, b](TensorNode& self) {
    if (a.requires_grad()) {
      auto g = grad_of(a);
      const auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto g = grad_of(b);
      const auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * factor;
  return make_output(a.shape(), std::move(out), "scale", {a}, [a, factor](TensorNode& self) {
    auto g = grad_of(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) shape_error("concat", shapes(parts.front(), p));
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != ax && p.shape()[d] != first[d]) shape_error("concat", shapes(parts.front(), p));
    }
    total += p.shape()[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];
  Shape shape = first;
  shape[ax] = total;
  std::vector<Real> out(shape_numel(shape));
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t chunk = p.shape()[ax] * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * chunk, chunk, out.data() + o * total * inner + offset);
    offset += chunk;
  }
  return make_output(shape, std::move(out), "concat", parts, [parts, ax, outer, inner, total](TensorNode& self) {
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t chunk = p.shape()[ax] * inner;
      if (p.requires_grad()) {
        auto g = grad_of(p);
        for (std::size_t o = 0; o < outer; ++o) {
          const Real* src = self.grad.data() + o * total * inner + offset;
          Real* dst = g.data() + o * chunk;
          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
      }
      offset += chunk;
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  if (begin >= end || end > x.shape()[ax]) {
    shape_error("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on " +
                             shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
  const std::size_t full = x.shape()[ax] * inner;
  const std::size_t chunk = (end - begin) * inner;
  Shape shape = x.shape();
  shape[ax] = end - begin;
  std::vector<Real> out(outer * chunk);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.data() + o * full + begin * inner, chunk, out.data() + o * chunk);
  return make_output(std::move(shape), std::move(out), "slice", {x},
                     [x, outer, inner, full, chunk, begin](TensorNode& self) {
                       auto g = grad_of(x);
                       for (std::size_t o = 0; o < outer; ++o) {
                         Real* dst = g.data() + o * full + begin * inner;
                         const Real* src = self.grad.data() + o * chunk;
                         for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_error("reshape", shape_string(x.shape()) + " to " + shape_string(shape));
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_output(std::move(shape), std::move(out), "reshape", {x}, [x](TensorNode& self) {
    auto g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor index_rows(const Tensor& table, std::span<const int> rows) {
  if (rows.empty()) throw std::invalid_argument("index_rows: empty index list");
  const std::size_t n_rows = table.dim(0);
  const std::size_t width = table.numel() / n_rows;
  std::vector<int> ids(rows.begin(), rows.end());
  std::vector<Real> out(ids.size() * width);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n_rows) {
      throw std::invalid_argument("index_rows: index " + std::to_string(ids[i]) + " out of range for shape " +
                                  shape_string(table.shape()));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * width, width, out.data() + i * width);
  }
  Shape shape = table.shape();
  shape[0] = ids.size();
  return make_output(std::move(shape), std::move(out), "index_rows", {table},
                     [table, ids = std::move(ids), width](TensorNode& self) {
                       auto g = grad_of(table);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         Real* dst = g.data() + static_cast<std::size_t>(ids[i]) * width;
                         const Real* src = self.grad.data() + i * width;
                         for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                       }
                     });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<Real> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xd.data() + r * cols;
    Real* o = out.data() + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    const Real inv = static_cast<Real>(1.0 / total);
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  auto probs = std::make_shared<std::vector<Real>>(out);
  return make_output(x.shape(), std::move(out), "softmax_rows", {x}, [x, probs, rows, cols](TensorNode& self) {
    auto g = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* p = probs->data() + r * cols;
      const Real* go = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(go[c]) * p[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += p[c] * (go[c] - static_cast<Real>(dot));
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<Real> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xd.data() + r * cols;
    Real* o = out.data() + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(in[c] - mx));
    const Real lse = mx + static_cast<Real>(std::log(total));
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  auto logp = std::make_shared<std::vector<Real>>(out);
  return make_output(x.shape(), std::move(out), "log_softmax_rows", {x}, [x, logp, rows, cols](TensorNode& self) {
    auto g = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* lp = logp->data() + r * cols;
      const Real* go = self.grad.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += go[c];
      for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += go[c] - std::exp(lp[c]) * static_cast<Real>(total);
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<Real> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real v = xd[i];
    if (v >= 0) {
      out[i] = Real(1) / (Real(1) + std::exp(-v));
    } else {
      const Real e = std::exp(v);
      out[i] = e / (Real(1) + e);
    }
  }
  auto y = std::make_shared<std::vector<Real>>(out);
  return make_output(x.shape(), std::move(out), "sigmoid", {x}, [x, y](TensorNode& self) {
    auto g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*y)[i] * (Real(1) - (*y)[i]);
  });
}

Tensor elu(const Tensor& x, Real alpha) {
  std::vector<Real> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0 ? xd[i] : alpha * std::expm1(xd[i]);
  auto y = std::make_shared<std::vector<Real>>(out);
  return make_output(x.shape(), std::move(out), "elu", {x}, [x, y, alpha](TensorNode& self) {
    auto g = grad_of(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (xd[i] > 0 ? Real(1) : (*y)[i] + alpha);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gamma.rank() != 1 || gamma.dim(0) != cols || beta.shape() != gamma.shape()) {
    shape_error("layer_norm", shapes(x, gamma) + " / " + shape_string(beta.shape()));
  }
  std::vector<Real> out(x.numel());
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xd.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = in[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const Real inv = static_cast<Real>(1.0 / std::sqrt(var + eps));
    (*inv_std)[r] = inv;
    const Real m = static_cast<Real>(mu);
    for (std::size_t c = 0; c < cols; ++c) {
      const Real h = (in[c] - m) * inv;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = h * gd[c] + bd[c];
    }
  }
  return make_output(x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
                     [x, gamma, beta, xhat, inv_std, rows, cols](TensorNode& self) {
                       const auto gd = gamma.data();
                       if (gamma.requires_grad() || beta.requires_grad()) {
                         std::vector<Real> dg(cols, 0), db(cols, 0);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) {
                             dg[c] += self.grad[r * cols + c] * (*xhat)[r * cols + c];
                             db[c] += self.grad[r * cols + c];
                           }
                         if (gamma.requires_grad()) {
                           auto g = grad_of(gamma);
                           for (std::size_t c = 0; c < cols; ++c) g[c] += dg[c];
                         }
                         if (beta.requires_grad()) {
                           auto g = grad_of(beta);
                           for (std::size_t c = 0; c < cols; ++c) g[c] += db[c];
                         }
                       }
                       if (!x.requires_grad()) return;
                       auto g = grad_of(x);
                       std::vector<Real> dh(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double mean_dh = 0.0, mean_dh_h = 0.0;
                         const Real* h = xhat->data() + r * cols;
                         for (std::size_t c = 0; c < cols; ++c) {
                           dh[c] = self.grad[r * cols + c] * gd[c];
                           mean_dh += dh[c];
                           mean_dh_h += static_cast<double>(dh[c]) * h[c];
                         }
                         mean_dh /= static_cast<double>(cols);
                         mean_dh_h /= static_cast<double>(cols);
                         const Real inv = (*inv_std)[r];
                         for (std::size_t c = 0; c < cols; ++c) {
                           g[r * cols + c] += inv * (dh[c] - static_cast<Real>(mean_dh) - h[c] * static_cast<Real>(mean_dh_h));
                         }
                       }
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionOptions& options) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    shape_error("attention", shape_string(q.shape()) + ", " + shape_string(k.shape()) + ", " + shape_string(v.shape()));
  }
  const std::size_t batch = q.dim(0), lq = q.dim(1), dim = q.dim(2);
  const std::size_t kb = k.dim(0), lk = k.dim(1), dv = v.dim(2);
  const std::size_t heads = options.heads;
  if ((kb != batch && kb != 1) || k.dim(2) != dim || v.dim(0) != kb || v.dim(1) != lk || heads == 0 ||
      dim % heads != 0 || dv % heads != 0) {
    shape_error("attention", shape_string(q.shape()) + ", " + shape_string(k.shape()) + ", " + shape_string(v.shape()) +
                                 " with " + std::to_string(heads) + " heads");
  }
  if (!options.key_lengths.empty() && options.key_lengths.size() != kb) {
    shape_error("attention", "key_lengths has " + std::to_string(options.key_lengths.size()) + " entries for key batch " +
                                 std::to_string(kb));
  }
  const std::size_t dh = dim / heads, dvh = dv / heads;
  const Real scale_factor = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh)));
  const long offset = static_cast<long>(lk) - static_cast<long>(lq);

  // visible key count per (key batch, query row)
  auto visible = [&options, offset, lk](std::size_t key_batch, std::size_t i) -> std::size_t {
    long limit = static_cast<long>(lk);
    if (!options.key_lengths.empty()) limit = std::min<long>(limit, static_cast<long>(options.key_lengths[key_batch]));
    if (options.causal) limit = std::min<long>(limit, static_cast<long>(i) + offset + 1);
    return limit > 0 ? static_cast<std::size_t>(limit) : 0;
  };

  auto probs = std::make_shared<std::vector<Real>>(batch * heads * lq * lk, Real(0));
  std::vector<Real> out(batch * lq * dv, Real(0));
  const auto qd = q.data(), kd = k.data(), vd = v.data();
  std::vector<Real> scores(lk);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t bk = kb == 1 ? 0 : b;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < lq; ++i) {
        const std::size_t n_vis = visible(bk, i);
        if (n_vis == 0) continue;
        const Real* qrow = qd.data() + (b * lq + i) * dim + h * dh;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < n_vis; ++j) {
          const Real* krow = kd.data() + (bk * lk + j) * dim + h * dh;
          Real s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qrow[c] * krow[c];
          scores[j] = s * scale_factor;
          mx = std::max(mx, scores[j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < n_vis; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          total += scores[j];
        }
        const Real inv = static_cast<Real>(1.0 / total);
        Real* prow = probs->data() + ((b * heads + h) * lq + i) * lk;
        Real* orow = out.data() + (b * lq + i) * dv + h * dvh;
        for (std::size_t j = 0; j < n_vis; ++j) {
          const Real p = scores[j] * inv;
          prow[j] = p;
          const Real* vrow = vd.data() + (bk * lk + j) * dv + h * dvh;
          for (std::size_t c = 0; c < dvh; ++c) orow[c] += p * vrow[c];
        }
      }
    }
  }
  return make_output(
      {batch, lq, dv}, std::move(out), "attention", {q, k, v},
      [q, k, v, probs, batch, lq, lk, kb, dim, dv, heads, dh, dvh, scale_factor](TensorNode& self) {
        const auto qd = q.data(), kd = k.data(), vd = v.data();
        std::span<Real> gq, gk, gv;
        if (q.requires_grad()) gq = grad_of(q);
        if (k.requires_grad()) gk = grad_of(k);
        if (v.requires_grad()) gv = grad_of(v);
        std::vector<Real> dp(lk);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t bk = kb == 1 ? 0 : b;
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < lq; ++i) {
              const Real* prow = probs->data() + ((b * heads + h) * lq + i) * lk;
              const Real* go = self.grad.data() + (b * lq + i) * dv + h * dvh;
              double weighted = 0.0;
              for (std::size_t j = 0; j < lk; ++j) {
                if (prow[j] == Real(0)) {
                  dp[j] = 0;
                  continue;
                }
                const Real* vrow = vd.data() + (bk * lk + j) * dv + h * dvh;
                Real s = 0;
                for (std::size_t c = 0; c < dvh; ++c) s += go[c] * vrow[c];
                dp[j] = s;
                weighted += static_cast<double>(s) * prow[j];
                if (!gv.empty()) {
                  Real* gvrow = gv.data() + (bk * lk + j) * dv + h * dvh;
                  for (std::size_t c = 0; c < dvh; ++c) gvrow[c] += prow[j] * go[c];
                }
              }
              const Real* qrow = qd.data() + (b * lq + i) * dim + h * dh;
              for (std::size_t j = 0; j < lk; ++j) {
                if (prow[j] == Real(0)) continue;
                const Real ds = prow[j] * (dp[j] - static_cast<Real>(weighted)) * scale_factor;
                const Real* krow = kd.data() + (bk * lk + j) * dim + h * dh;
                if (!gq.empty()) {
                  Real* gqrow = gq.data() + (b * lq + i) * dim + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gqrow[c] += ds * krow[c];
                }
                if (!gk.empty()) {
                  Real* gkrow = gk.data() + (bk * lk + j) * dim + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkrow[c] += ds * qrow[c];
                }
              }
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng) {
  if (!(rate >= 0) || rate >= 1) throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (rate == 0) return x;
  const Real keep_scale = Real(1) / (Real(1) - rate);
  auto mask = std::make_shared<std::vector<Real>>(x.numel());
  std::vector<Real> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? Real(0) : keep_scale;
    out[i] = xd[i] * (*mask)[i];
  }
  return make_output(x.shape(), std::move(out), "dropout", {x}, [x, mask](TensorNode& self) {
    auto g = grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (Real v : x.data()) total += v;
  return make_output({1}, {static_cast<Real>(total)}, "sum", {x}, [x](TensorNode& self) {
    auto g = grad_of(x);
    for (Real& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (Real v : x.data()) total += v;
  const double n = static_cast<double>(x.numel());
  return make_output({1}, {static_cast<Real>(total / n)}, "mean", {x}, [x, n](TensorNode& self) {
    auto g = grad_of(x);
    const Real share = static_cast<Real>(self.grad[0] / n);
    for (Real& v : g) v += share;
  });
}

Tensor sum_squares(const Tensor& x) {
  double total = 0.0;
  for (Real v : x.data()) total += static_cast<double>(v) * v;
  return make_output({1}, {static_cast<Real>(total)}, "sum_squares", {x}, [x](TensorNode& self) {
    auto g = grad_of(x);
    const auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += Real(2) * xd[i] * self.grad[0];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  if (targets.size() != rows) {
    shape_error("cross_entropy", shape_string(logits.shape()) + " with " + std::to_string(targets.size()) + " targets");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  auto probs = std::make_shared<std::vector<Real>>(logits.numel());
  const auto ld = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= cols) {
      throw std::invalid_argument("cross_entropy: target " + std::to_string(tgt[r]) + " outside [0, " +
                                  std::to_string(cols) + ")");
    }
    const Real* in = ld.data() + r * cols;
    const Real mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(static_cast<double>(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] = static_cast<Real>(std::exp(static_cast<double>(in[c] - mx)) / z);
    total += std::log(z) + mx - in[tgt[r]];
  }
  const double n = static_cast<double>(rows);
  return make_output({1}, {static_cast<Real>(total / n)}, "cross_entropy", {logits},
                     [logits, probs, tgt = std::move(tgt), rows, cols, n](TensorNode& self) {
                       auto g = grad_of(logits);
                       const Real share = static_cast<Real>(self.grad[0] / n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t c = 0; c < cols; ++c) {
                           const Real target = static_cast<std::size_t>(tgt[r]) == c ? Real(1) : Real(0);
                           g[r * cols + c] += share * ((*probs)[r * cols + c] - target);
                         }
                       }
                     });
}

namespace {
thread_local StopGradientTape* g_tape = nullptr;
}  // namespace

StopGradientTape::StopGradientTape(Mode mode, std::vector<std::vector<Real>>& values)
    : mode_(mode), values_(values), previous_(g_tape) {
  if (mode_ == Mode::kRecord) values_.clear();
  g_tape = this;
}

StopGradientTape::~StopGradientTape() { g_tape = previous_; }

std::vector<Real> StopGradientTape::next(std::span<const Real> x) {
  if (mode_ == Mode::kRecord) {
    values_.emplace_back(x.begin(), x.end());
    return values_.back();
  }
  if (cursor_ >= values_.size() || values_[cursor_].size() != x.size()) {
    throw std::logic_error("StopGradientTape: replay does not match the recorded call sequence");
  }
  return values_[cursor_++];
}

Tensor stop_gradient(const Tensor& x) {
  if (g_tape) return Tensor(x.shape(), g_tape->next(x.data()), false);
  return Tensor(x.shape(), std::vector<Real>(x.data().begin(), x.data().end()), false);
}

std::vector<int> hold_choices(std::vector<int> choices) {
  if (!g_tape) return choices;
  const std::vector<Real> as_real(choices.begin(), choices.end());
  const std::vector<Real> held = g_tape->next(as_real);
  for (std::size_t i = 0; i < choices.size(); ++i) choices[i] = static_cast<int>(held[i]);
  return choices;
}

ACE_NAMESPACE_END
