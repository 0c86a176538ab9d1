#include "ace/tensor/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "ace/ids/rqvae.hpp"
#include "ace/model/fusion_model.hpp"
#include "ace/tensor/ops.hpp"
#include "ace/train/trainer.hpp"

#if !defined(ACE_REAL_DOUBLE)
#error "the gradient suite must be compiled with ACE_REAL_DOUBLE"
#endif

namespace ace::gradcheck {

namespace {

using Loss = std::function<Tensor()>;

struct Checker {
  const SuiteOptions& options;
  Rng& rng;

  std::size_t dim(std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1)); }

  Tensor input(Shape shape, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& x : t.mutable_data()) x = rng.normal() * scale;
    return t;
  }

  Tensor weights(const Shape& shape) {
    Tensor t = Tensor::zeros(shape);
    for (double& x : t.mutable_data()) x = rng.normal();
    return t;
  }

  // Scalar projection so every output entry contributes.
  Tensor project(const Tensor& y) { return sum(mul(y, weights(y.shape()))); }

  double relative_error(std::vector<Tensor> inputs, const Loss& f) {
    std::vector<std::vector<double>> tape;
    Tensor loss;
    {
      StopGradientTape rec(StopGradientTape::Mode::kRecord, tape);
      loss = f();
    }
    for (auto& t : inputs) t.zero_grad();
    backward(loss);
    auto eval = [&] {
      StopGradientTape rep(StopGradientTape::Mode::kReplay, tape);
      NoGradGuard guard;
      return f().item();
    };
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (auto& t : inputs) {
      const auto g = t.grad();
      std::vector<std::size_t> coords;
      if (t.numel() <= options.max_coords) {
        for (std::size_t i = 0; i < t.numel(); ++i) coords.push_back(i);
      } else {
        for (std::size_t i = 0; i < options.max_coords; ++i) coords.push_back(static_cast<std::size_t>(rng.uniform_int(t.numel())));
      }
      for (std::size_t i : coords) {
        const double analytic = g.empty() ? 0.0 : g[i];
        double& v = t.mutable_data()[i];
        const double saved = v;
        v = saved + options.step;
        const double up = eval();
        v = saved - options.step;
        const double down = eval();
        v = saved;
        const double numeric = (up - down) / (2.0 * options.step);
        diff += (analytic - numeric) * (analytic - numeric);
        na += analytic * analytic;
        nn += numeric * numeric;
      }
    }
    const double scale = std::sqrt(std::max(na, nn));
    if (scale < 1e-12) return std::sqrt(diff);
    return std::sqrt(diff) / scale;
  }
};

using Trial = std::function<double(Checker&)>;

std::vector<std::pair<std::string, Trial>> suite() {
  std::vector<std::pair<std::string, Trial>> ops;
  ops.emplace_back("matmul", [](Checker& c) {
    const std::size_t b = c.dim(1, 3), m = c.dim(1, 4), k = c.dim(1, 5), n = c.dim(1, 4);
    Tensor x = c.input({b, m, k}), w = c.input({k, n});
    const Tensor p = c.weights({b, m, n});
    return c.relative_error({x, w}, [&] { return sum(mul(matmul(x, w), p)); });
  });
  ops.emplace_back("add", [](Checker& c) {
    const std::size_t r = c.dim(1, 4), n = c.dim(1, 5);
    Tensor a = c.input({r, n}), b = c.input({r, n}), bias = c.input({n});
    const Tensor p = c.weights({r, n});
    return c.relative_error({a, b, bias}, [&] { return sum(mul(add(add(a, b), bias), p)); });
  });
  ops.emplace_back("sub", [](Checker& c) {
    const std::size_t r = c.dim(1, 4), n = c.dim(1, 5);
    Tensor a = c.input({r, n}), b = c.input({r, n});
    const Tensor p = c.weights({r, n});
    return c.relative_error({a, b}, [&] { return sum(mul(sub(a, b), p)); });
  });
  ops.emplace_back("mul", [](Checker& c) {
    const std::size_t r = c.dim(1, 4), n = c.dim(1, 5);
    Tensor a = c.input({r, n}), b = c.input({r, n});
    const Tensor p = c.weights({r, n});
    return c.relative_error({a, b}, [&] { return sum(mul(mul(a, b), p)); });
  });
  ops.emplace_back("scale", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 4)});
    const double f = c.rng.normal();
    const Tensor p = c.weights(a.shape());
    return c.relative_error({a}, [&] { return sum(mul(scale(a, f), p)); });
  });
  ops.emplace_back("concat", [](Checker& c) {
    const std::size_t r = c.dim(1, 3), n = c.dim(1, 3);
    const int axis = static_cast<int>(c.rng.uniform_int(3)) - 1;
    Shape s1{r, n, 2}, s2{r, n, 2};
    const std::size_t ax = axis < 0 ? 2 : static_cast<std::size_t>(axis);
    s2[ax] = c.dim(1, 3);
    Tensor a = c.input(s1), b = c.input(s2);
    Tensor probe = concat({a, b}, axis);
    const Tensor p = c.weights(probe.shape());
    return c.relative_error({a, b}, [&] { return sum(mul(concat({a, b}, axis), p)); });
  });
  ops.emplace_back("slice", [](Checker& c) {
    Tensor a = c.input({c.dim(2, 4), c.dim(2, 5)});
    const int axis = static_cast<int>(c.rng.uniform_int(2));
    const std::size_t len = a.dim(axis);
    const std::size_t begin = static_cast<std::size_t>(c.rng.uniform_int(len - 1));
    const std::size_t end = begin + 1 + static_cast<std::size_t>(c.rng.uniform_int(len - begin));
    const Tensor p = c.weights(slice(a, axis, begin, end).shape());
    return c.relative_error({a}, [&] { return sum(mul(slice(a, axis, begin, end), p)); });
  });
  ops.emplace_back("reshape", [](Checker& c) {
    const std::size_t r = c.dim(1, 4), n = c.dim(1, 4);
    Tensor a = c.input({r, n});
    const Tensor p = c.weights({n, r});
    return c.relative_error({a}, [&] { return sum(mul(reshape(a, {n, r}), p)); });
  });
  ops.emplace_back("index_rows", [](Checker& c) {
    Tensor table = c.input({c.dim(2, 5), c.dim(1, 4)});
    std::vector<int> ids(c.dim(1, 6));
    for (int& i : ids) i = static_cast<int>(c.rng.uniform_int(table.dim(0)));
    const Tensor p = c.weights({ids.size(), table.dim(1)});
    return c.relative_error({table}, [&] { return sum(mul(index_rows(table, ids), p)); });
  });
  ops.emplace_back("softmax_rows", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 6)});
    const Tensor p = c.weights(a.shape());
    return c.relative_error({a}, [&] { return sum(mul(softmax_rows(a), p)); });
  });
  ops.emplace_back("log_softmax_rows", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 6)});
    const Tensor p = c.weights(a.shape());
    return c.relative_error({a}, [&] { return sum(mul(log_softmax_rows(a), p)); });
  });
  ops.emplace_back("sigmoid", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 6)}, 2.0);
    const Tensor p = c.weights(a.shape());
    return c.relative_error({a}, [&] { return sum(mul(sigmoid(a), p)); });
  });
  ops.emplace_back("elu", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 6)}, 2.0);
    const Tensor p = c.weights(a.shape());
    return c.relative_error({a}, [&] { return sum(mul(elu(a), p)); });
  });
  ops.emplace_back("layer_norm", [](Checker& c) {
    const std::size_t n = c.dim(4, 8);
    Tensor a = c.input({c.dim(1, 4), n}), g = c.input({n}), b = c.input({n});
    const Tensor p = c.weights(a.shape());
    return c.relative_error({a, g, b}, [&] { return sum(mul(layer_norm(a, g, b), p)); });
  });
  ops.emplace_back("attention", [](Checker& c) {
    const std::size_t heads = c.dim(1, 2), dh = c.dim(1, 3), b = c.dim(1, 3), lq = c.dim(1, 4), lk = c.dim(1, 4);
    const std::size_t bk = c.rng.uniform() < 0.3 ? 1 : b;
    Tensor q = c.input({b, lq, heads * dh}), k = c.input({bk, lk, heads * dh}), v = c.input({bk, lk, heads * dh});
    AttentionOptions o;
    o.heads = heads;
    o.causal = c.rng.uniform() < 0.5 && lk >= lq;
    if (c.rng.uniform() < 0.5) {
      for (std::size_t i = 0; i < bk; ++i) o.key_lengths.push_back(c.dim(1, lk));
    }
    const Tensor p = c.weights({b, lq, heads * dh});
    return c.relative_error({q, k, v}, [&] { return sum(mul(attention(q, k, v, o), p)); });
  });
  ops.emplace_back("dropout", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 6)});
    const Tensor p = c.weights(a.shape());
    const std::uint64_t seed = c.rng.next_u64();
    return c.relative_error({a}, [&] {
      Rng r(seed);
      return sum(mul(dropout(a, 0.3, r), p));
    });
  });
  ops.emplace_back("sum", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 4)});
    return c.relative_error({a}, [&] { return sum(a); });
  });
  ops.emplace_back("mean", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 4)});
    return c.relative_error({a}, [&] { return mean(a); });
  });
  ops.emplace_back("sum_squares", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 4)});
    return c.relative_error({a}, [&] { return sum_squares(a); });
  });
  ops.emplace_back("cross_entropy", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 5), c.dim(2, 6)});
    std::vector<int> targets(a.rows());
    for (int& t : targets) t = static_cast<int>(c.rng.uniform_int(a.cols()));
    return c.relative_error({a}, [&] { return cross_entropy(a, targets); });
  });
  ops.emplace_back("stop_gradient", [](Checker& c) {
    Tensor a = c.input({c.dim(1, 4), c.dim(1, 4)});
    return c.relative_error({a}, [&] { return sum(mul(a, stop_gradient(mul(a, a)))); });
  });

  auto fusion_inputs = [](Checker& c, std::size_t& s, std::size_t& d, std::size_t& heads, Tensor& y,
                          std::vector<Tensor>& e, std::vector<std::size_t>& lens) {
    s = c.dim(1, 3);
    heads = c.dim(1, 2);
    d = heads * c.dim(1, 2);
    const std::size_t b = c.dim(1, 2), lq = c.dim(1, 3), lk = c.dim(1, 4);
    y = c.input({b, lq, d});
    e.clear();
    for (std::size_t i = 0; i < s; ++i) e.push_back(c.input({b, lk, d}));
    lens.clear();
    for (std::size_t i = 0; i < b; ++i) lens.push_back(c.dim(1, lk));
  };
  for (model::GateMode gate : {model::GateMode::kSelfGate, model::GateMode::kLiteral}) {
    ops.emplace_back("coarse_fuse/" + model::gate_mode_name(gate), [gate, fusion_inputs](Checker& c) {
      std::size_t s, d, heads;
      Tensor y;
      std::vector<Tensor> e;
      std::vector<std::size_t> lens;
      fusion_inputs(c, s, d, heads, y, e, lens);
      model::CoarseFusionParams p{c.input({s * d, d}, 0.5), c.input({d}, 0.5), c.input({d, d}, 0.5),
                                  c.input({d, d}, 0.5), c.input({d, d}, 0.5)};
      const Tensor w = c.weights(y.shape());
      std::vector<Tensor> all{y, p.w, p.b, p.wq, p.wk, p.wv};
      all.insert(all.end(), e.begin(), e.end());
      return c.relative_error(all, [&] { return sum(mul(model::coarse_fuse(y, e, p, heads, gate, lens), w)); });
    });
  }
  ops.emplace_back("fine_fuse", [fusion_inputs](Checker& c) {
    std::size_t s, d, heads;
    Tensor y;
    std::vector<Tensor> e;
    std::vector<std::size_t> lens;
    fusion_inputs(c, s, d, heads, y, e, lens);
    model::FineFusionParams p;
    std::vector<Tensor> all{y};
    all.insert(all.end(), e.begin(), e.end());
    for (std::size_t i = 0; i < s; ++i) {
      p.wq.push_back(c.input({d, d}, 0.5));
      p.wk.push_back(c.input({d, d}, 0.5));
      p.wv.push_back(c.input({d, d}, 0.5));
      p.w.push_back(c.input({2 * d, d}, 0.5));
      p.b.push_back(c.input({d}, 0.5));
      for (const Tensor* t : {&p.wq[i], &p.wk[i], &p.wv[i], &p.w[i], &p.b[i]}) all.push_back(*t);
    }
    const Tensor w = c.weights(y.shape());
    return c.relative_error(all, [&] { return sum(mul(model::fine_fuse(y, e, p, heads, lens), w)); });
  });
  ops.emplace_back("rqvae_loss", [](Checker& c) {
    ids::RqVaeConfig cfg;
    cfg.hidden = {c.dim(3, 6)};
    cfg.latent_dim = c.dim(2, 4);
    cfg.n_codebooks = c.dim(1, 3);
    cfg.codebook_size = c.dim(2, 4);
    cfg.beta = 0.25;
    const std::size_t in = c.dim(3, 6), n = c.dim(4, 8);
    ids::RqVae model(in, cfg, c.rng.next_u64());
    Matrix x(n, in);
    for (float& v : x.values) v = static_cast<float>(c.rng.normal());
    Rng init(c.rng.next_u64());
    model.init_codebooks(x, init);
    for (std::size_t m = 0; m < cfg.n_codebooks; ++m) {
      Tensor book = model.codebook(m);
      for (double& v : book.mutable_data()) v += 0.3 * c.rng.normal();
    }
    const Tensor xt = ids::matrix_to_tensor(x);
    std::vector<Tensor> params;
    for (const auto& entry : model.params().entries()) params.push_back(entry.value);
    return c.relative_error(params, [&] { return model.loss(xt); });
  });
  ops.emplace_back("bidirectional_kl", [](Checker& c) {
    const Shape s{c.dim(1, 3), c.dim(1, 3), c.dim(2, 5)};
    Tensor p = c.input(s, 1.5), q = c.input(s, 1.5);
    return c.relative_error({p, q}, [&] { return train::bidirectional_kl(p, q); });
  });
  ops.emplace_back("training_loss", [](Checker& c) {
    model::ModelConfig mc;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.ffn_dim = 32;
    mc.encoder_layers = c.dim(1, 3);
    mc.decoder_layers = c.dim(1, 2);
    mc.dropout_rate = 0.1;
    mc.query_vocab_size = 12;
    mc.max_len = 8;
    mc.layout.sizes = {3, 2, 2, 2};
    mc.gate_mode = c.rng.uniform() < 0.5 ? model::GateMode::kSelfGate : model::GateMode::kLiteral;
    model::FusionModel m(mc, c.rng.next_u64());
    std::vector<train::Example> batch;
    for (std::size_t i = 0, n = c.dim(1, 3); i < n; ++i) {
      std::vector<int> q(c.dim(1, 4));
      for (int& t : q) t = static_cast<int>(c.rng.uniform_int(12));
      std::vector<int> id;
      for (std::size_t s : mc.layout.sizes) id.push_back(static_cast<int>(c.rng.uniform_int(s)));
      batch.push_back({q, mc.layout.to_tokens(id), static_cast<int>(i)});
    }
    const std::uint64_t seed = c.rng.next_u64();
    const double omega = 0.15;
    std::vector<Tensor> params;
    for (const auto& entry : m.params().entries()) params.push_back(entry.value);
    return c.relative_error(params, [&] {
      Rng r(seed);
      return train::training_loss(m, batch, omega, &r, nullptr);
    });
  });
  return ops;
}

}  // namespace

SuiteResult run_gradient_suite(std::uint64_t seed, const SuiteOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult result;
  result.passed = true;
  std::uint64_t index = 0;
  for (const auto& [name, trial] : suite()) {
    Rng rng = Rng::derive(seed, {index++});
    Checker checker{options, rng};
    OpResult op;
    op.name = name;
    for (std::size_t t = 0; t < options.trials; ++t) {
      const double err = trial(checker);
      op.max_rel_error = std::max(op.max_rel_error, std::isnan(err) ? INFINITY : err);
      ++op.trials;
    }
    op.passed = op.max_rel_error < options.tolerance;
    result.passed = result.passed && op.passed;
    result.ops.push_back(op);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace ace::gradcheck
