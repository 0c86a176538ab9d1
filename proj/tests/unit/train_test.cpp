#include <cmath>
#include <filesystem>
#include <fstream>

#include "ace/data/io.hpp"
#include "ace/tensor/container.hpp"
#include "ace/train/trainer.hpp"
#include "doctest.h"

using namespace ace;
using namespace ace::model;
using namespace ace::train;

namespace {

ModelConfig small(double dropout = 0.1) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.dropout_rate = dropout;
  c.query_vocab_size = 40;
  c.max_len = 16;
  c.layout.sizes = {4, 3, 3, 2};
  return c;
}

// Each item has a distinct two-token query.
std::vector<Example> toy_examples(const VocabLayout& layout, std::size_t n) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(i % 4), b = static_cast<int>((i / 4) % 3), c = static_cast<int>((i / 12) % 3);
    out.push_back({{static_cast<int>(2 * i % 40), static_cast<int>((2 * i + 1) % 40)},
                   layout.to_tokens({a, b, c, 0}),
                   static_cast<int>(i)});
  }
  return out;
}

Tensor from_probs(std::vector<double> p) {
  std::vector<Real> logits;
  for (double x : p) logits.push_back(static_cast<Real>(std::log(x)));
  return Tensor({1, p.size()}, logits);
}

double kl_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]) + q[i] * std::log(q[i] / p[i]);
  return s;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ace_train_test_" + name);
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("bidirectional kl on a two-outcome example") {
    const double oracle = kl_oracle({0.5, 0.5}, {0.25, 0.75});
    CHECK(oracle == doctest::Approx(0.2746).epsilon(1e-3));
    const double v = bidirectional_kl(from_probs({0.5, 0.5}), from_probs({0.25, 0.75})).item();
    CHECK(std::abs(v - oracle) < 1e-6);
    CHECK(bidirectional_kl(from_probs({0.3, 0.7}), from_probs({0.3, 0.7})).item() == 0);
  }

  TEST_CASE("bidirectional kl is non-negative") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<Real> a(6), b(6);
      for (auto& x : a) x = static_cast<Real>(rng.normal() * 3);
      for (auto& x : b) x = static_cast<Real>(rng.normal() * 3);
      REQUIRE(bidirectional_kl(Tensor({1, 6}, a), Tensor({1, 6}, b)).item() >= 0);
    }
    CHECK_THROWS_AS(bidirectional_kl(Tensor::zeros({1, 3}), Tensor::zeros({1, 4})), std::invalid_argument);
  }

  TEST_CASE("sequence log prob with uniform logits") {
    FusionModel m(small(), 1);
    for (auto& e : m.params().entries()) {
      if (e.name == "out.w" || e.name == "out.b") std::fill(e.value.mutable_data().begin(), e.value.mutable_data().end(), Real(0));
    }
    const auto& layout = m.config().layout;
    const double expect = 4.0 * std::log(1.0 / static_cast<double>(layout.total()));
    CHECK(sequence_log_prob(m, {1, 2}, layout.to_tokens({1, 2, 0, 1})) == doctest::Approx(expect).epsilon(1e-6));
  }

  TEST_CASE("sequence log prob equals the stepwise chain rule") {
    FusionModel m(small(), 2);
    const auto& layout = m.config().layout;
    const std::vector<int> query{5, 6, 7};
    const std::vector<int> id = layout.to_tokens({3, 1, 2, 1});
    double chain = 0.0;
    std::vector<int> prefix{static_cast<int>(layout.bos())};
    NoGradGuard guard;
    const auto mem = m.memory(m.encode({query}));
    for (std::size_t t = 0; t < id.size(); ++t) {
      const Tensor logits = m.decoder_forward({prefix}, mem);
      const auto row = logits.data().subspan(t * layout.total(), layout.total());
      double mx = -1e300, z = 0;
      for (Real x : row) mx = std::max(mx, double(x));
      for (Real x : row) z += std::exp(double(x) - mx);
      chain += double(row[static_cast<std::size_t>(id[t])]) - mx - std::log(z);
      prefix.push_back(id[t]);
    }
    CHECK(sequence_log_prob(m, query, id) == doctest::Approx(chain).epsilon(1e-5));
    const auto many = sequence_log_probs(m, query, {id, layout.to_tokens({0, 0, 0, 0})});
    CHECK(many[0] == sequence_log_prob(m, query, id));
  }

  TEST_CASE("without dropout both passes agree") {
    FusionModel m(small(0.0), 3);
    const auto batch = toy_examples(m.config().layout, 8);
    Rng rng(1);
    StepResult parts;
    training_loss(m, batch, 0.15, &rng, &parts);
    CHECK(parts.kl == 0);
    CHECK(parts.loss == parts.ce);
    StepResult plain;
    training_loss(m, batch, 0.0, &rng, &plain);
    CHECK(plain.loss == doctest::Approx(parts.ce).epsilon(1e-6));
    CHECK(mean_token_nll(m, batch) == doctest::Approx(plain.ce).epsilon(1e-6));
  }

  TEST_CASE("loss decomposes into ce plus weighted kl") {
    FusionModel m(small(0.3), 4);
    const auto batch = toy_examples(m.config().layout, 8);
    Rng rng(2);
    StepResult parts;
    const Tensor loss = training_loss(m, batch, 0.15, &rng, &parts);
    CHECK(parts.kl > 0);
    const Real expect = static_cast<Real>(parts.ce) + static_cast<Real>(parts.kl) * static_cast<Real>(0.15);
    CHECK(loss.item() == expect);
  }

  TEST_CASE("training step is reproducible") {
    const auto cfg = small(0.1);
    FusionModel a(cfg, 5), b(cfg, 5);
    const auto batch = toy_examples(cfg.layout, 8);
    TrainConfig tc;
    Rng ra(9), rb(9);
    const auto sa = training_step(a, batch, tc, ra, 1e-3, 0);
    const auto sb = training_step(b, batch, tc, rb, 1e-3, 0);
    CHECK(sa.loss == sb.loss);
    for (const auto& e : a.params().entries()) {
      const Tensor other = b.params().get(e.name);
      REQUIRE(std::equal(e.value.data().begin(), e.value.data().end(), other.data().begin()));
    }
  }

  TEST_CASE("zero epochs leave the model unchanged") {
    const auto cfg = small();
    FusionModel a(cfg, 6), b(cfg, 6);
    TrainConfig tc;
    tc.epochs = 0;
    const auto res = train_loop(a, toy_examples(cfg.layout, 16), {}, tc);
    CHECK(res.epochs.empty());
    for (const auto& e : a.params().entries()) {
      const Tensor other = b.params().get(e.name);
      CHECK(std::equal(e.value.data().begin(), e.value.data().end(), other.data().begin()));
    }
  }

  TEST_CASE("training lowers the training nll") {
    const auto cfg = small();
    FusionModel m(cfg, 7);
    const auto data = toy_examples(cfg.layout, 32);
    const double before = mean_token_nll(m, data);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 10;
    tc.warmup_epochs = 1;
    tc.lr_peak = 1e-3;
    tc.seed = 3;
    const auto res = train_loop(m, data, {}, tc);
    CHECK(res.epochs.size() == 10);
    CHECK(mean_token_nll(m, data) < before);
  }

  TEST_CASE("checkpoint roundtrip is bitwise") {
    ModelConfig cfg = small();
    cfg.gate_mode = GateMode::kLiteral;
    FusionModel m(cfg, 8);
    const auto path = temp_path("ckpt.bin");
    save_checkpoint(m, path, {{"seed", 8}});
    nlohmann::json side;
    const FusionModel back = load_checkpoint(path, &side);
    CHECK(side.at("seed") == 8);
    CHECK(side.at("layout_fingerprint") == cfg.layout.fingerprint());
    const auto& c2 = back.config();
    CHECK(c2.d_model == cfg.d_model);
    CHECK(c2.n_heads == cfg.n_heads);
    CHECK(c2.ffn_dim == cfg.ffn_dim);
    CHECK(c2.encoder_layers == cfg.encoder_layers);
    CHECK(c2.decoder_layers == cfg.decoder_layers);
    CHECK(c2.dropout_rate == cfg.dropout_rate);
    CHECK(c2.query_vocab_size == cfg.query_vocab_size);
    CHECK(c2.max_len == cfg.max_len);
    CHECK(c2.gate_mode == cfg.gate_mode);
    CHECK(c2.fusion_mode == cfg.fusion_mode);
    CHECK(c2.layout == cfg.layout);

    const auto q = std::vector<std::vector<int>>{{1, 2, 3}};
    const std::vector<std::vector<int>> prefix{{static_cast<int>(cfg.layout.bos()), 1, 5}};
    const Tensor a = m.decoder_forward(prefix, m.memory(m.encode(q)));
    const Tensor b = back.decoder_forward(prefix, back.memory(back.encode(q)));
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
  }

  TEST_CASE("truncated checkpoint is rejected") {
    FusionModel m(small(), 9);
    const auto path = temp_path("trunc.bin");
    save_checkpoint(m, path);
    std::string bytes = data::read_text_file(path);
    bytes.resize(bytes.size() / 2);
    data::write_text_file(path, bytes);
    try {
      load_checkpoint(path);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
  }
}
