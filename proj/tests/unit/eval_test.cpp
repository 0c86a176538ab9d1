#include <algorithm>
#include <cmath>
#include <numeric>

#include "ace/eval/bench.hpp"
#include "ace/eval/coherence.hpp"
#include "ace/eval/experiment.hpp"
#include "ace/eval/metrics.hpp"
#include "doctest.h"

using namespace ace;
using namespace ace::eval;

namespace {

model::ModelConfig small(model::VocabLayout layout) {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.dropout_rate = 0.0;
  c.query_vocab_size = 40;
  c.max_len = 16;
  c.layout = std::move(layout);
  return c;
}

std::vector<train::Example> toy(const model::VocabLayout& layout, std::size_t n) {
  std::vector<train::Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({{static_cast<int>(2 * i), static_cast<int>(2 * i + 1)},
                   layout.to_tokens({static_cast<int>(i % 4), static_cast<int>(i / 4), 0}),
                   static_cast<int>(i)});
  }
  return out;
}

decode::PrefixTree tree_of(const std::vector<train::Example>& ex) {
  std::vector<std::vector<int>> ids;
  std::vector<int> items;
  for (const auto& e : ex) {
    ids.push_back(e.identifier);
    items.push_back(e.item_id);
  }
  return decode::PrefixTree::build(ids, items);
}

Matrix two_blobs(std::size_t per, Rng& rng, std::vector<std::vector<int>>& ids) {
  Matrix m(2 * per, 3);
  ids.clear();
  for (std::size_t i = 0; i < 2 * per; ++i) {
    const int g = i < per ? 0 : 1;
    for (std::size_t d = 0; d < 3; ++d) m.row(i)[d] = static_cast<float>((g ? 10.0 : 0.0) + rng.normal());
    ids.push_back({g, static_cast<int>(i % 3), static_cast<int>(i)});
  }
  return m;
}

}  // namespace

TEST_SUITE("eval_bench") {
  TEST_CASE("recall and reciprocal rank") {
    const std::vector<int> ranked{4, 8, 15, 16, 23, 42, 7, 1, 2, 3, 9};
    CHECK(recall_at_k(ranked, 4, 1) == 1);
    CHECK(recall_at_k(ranked, 42, 5) == 0);
    CHECK(recall_at_k(ranked, 42, 10) == 1);
    CHECK(mrr_at_k(ranked, 4) == 1.0);
    CHECK(mrr_at_k(ranked, 16) == 0.25);
    CHECK(mrr_at_k(ranked, 9, 10) == 0.0);
    CHECK(mrr_at_k(ranked, 99) == 0.0);
    CHECK_THROWS_AS(recall_at_k(ranked, 4, 0), std::invalid_argument);
  }

  TEST_CASE("run_eval agrees with direct counting") {
    const model::VocabLayout layout{{4, 4, 1}};
    model::FusionModel m(small(layout), 1);
    const auto ex = toy(layout, 16);
    const auto tree = tree_of(ex);
    const auto reports = run_eval(m, tree, ex, {5, 10});
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
      double hits1 = 0, hits5 = 0, hits10 = 0, rr = 0;
      for (const auto& e : ex) {
        const auto out = decode::constrained_beam_search(m, e.query, tree, r.beam_size);
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (out[i].item_id != e.item_id) continue;
          hits1 += i < 1;
          hits5 += i < 5;
          hits10 += i < 10;
          rr += i < 10 ? 1.0 / double(i + 1) : 0.0;
        }
      }
      CHECK(r.recall1 == doctest::Approx(hits1 / 16));
      CHECK(r.recall5 == doctest::Approx(hits5 / 16));
      CHECK(r.recall10 == doctest::Approx(hits10 / 16));
      CHECK(r.mrr10 == doctest::Approx(rr / 16));
      CHECK(r.recall1 <= r.recall5);
      CHECK(r.recall5 <= r.recall10);
      CHECK(r.mrr10 <= r.recall10);
    }
  }

  TEST_CASE("a memorizing model scores perfectly") {
    const model::VocabLayout layout{{4, 4, 1}};
    model::FusionModel m(small(layout), 2);
    const auto ex = toy(layout, 16);
    train::TrainConfig tc;
    tc.batch_size = 8;
    tc.epochs = 60;
    tc.warmup_epochs = 2;
    tc.lr_peak = 3e-3;
    tc.omega = 0.0;
    tc.seed = 1;
    train::train_loop(m, ex, {}, tc);
    const auto r = run_eval(m, tree_of(ex), ex, {5}).front();
    CHECK(r.recall1 == 1.0);
    CHECK(r.recall5 == 1.0);
    CHECK(r.mrr10 == 1.0);
    const auto acc = token_position_accuracy(m, ex);
    for (double a : acc.per_position) CHECK(a == 1.0);
  }

  TEST_CASE("token accuracy equals per-position argmax counting") {
    const model::VocabLayout layout{{4, 4, 1}};
    model::FusionModel m(small(layout), 3);
    const auto ex = toy(layout, 16);
    const auto acc = token_position_accuracy(m, ex, 5);
    std::vector<double> count(3, 0);
    for (const auto& e : ex) {
      std::vector<int> prefix{static_cast<int>(layout.bos()), e.identifier[0], e.identifier[1]};
      const Tensor logits = m.decoder_forward({prefix}, m.memory(m.encode({e.query})));
      for (std::size_t t = 0; t < 3; ++t) {
        const auto row = logits.data().subspan(t * layout.total(), layout.total());
        if (std::max_element(row.begin(), row.end()) - row.begin() == e.identifier[t]) count[t] += 1;
      }
    }
    for (std::size_t t = 0; t < 3; ++t) CHECK(acc.per_position[t] == doctest::Approx(count[t] / 16));
    CHECK(acc.first == acc.per_position[0]);
    CHECK(acc.later == doctest::Approx((acc.per_position[1] + acc.per_position[2]) / 2));
  }

  TEST_CASE("coherence separates two blobs") {
    Rng rng(4);
    std::vector<std::vector<int>> ids;
    const Matrix m = two_blobs(30, rng, ids);
    const auto r = coherence_stats(m, ids);
    CHECK(r.coarse_groups == 2);
    CHECK(r.coarse.exhaustive);
    CHECK(r.coarse.intra < r.coarse.inter);
    CHECK(r.coarse.intra >= 0);
    CHECK(r.has_fine);
  }

  TEST_CASE("sampled coherence is close to exhaustive enumeration") {
    Rng rng(5);
    std::vector<std::vector<int>> ids;
    const Matrix m = two_blobs(100, rng, ids);
    const auto exact = coherence_stats(m, ids, 1, 1000000);
    const auto sampled = coherence_stats(m, ids, 1, 5000);
    REQUIRE(exact.coarse.exhaustive);
    REQUIRE_FALSE(sampled.coarse.exhaustive);
    double intra = 0, inter = 0;
    std::size_t ni = 0, nx = 0;
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t j = i + 1; j < m.rows; ++j) {
        const double d = std::sqrt(squared_distance(m.row(i), m.row(j)));
        if (ids[i][0] == ids[j][0]) intra += d, ++ni;
        else inter += d, ++nx;
      }
    CHECK(exact.coarse.intra == doctest::Approx(intra / ni).epsilon(1e-9));
    CHECK(exact.coarse.inter == doctest::Approx(inter / nx).epsilon(1e-9));
    CHECK(std::abs(sampled.coarse.intra / exact.coarse.intra - 1) < 0.05);
    CHECK(std::abs(sampled.coarse.inter / exact.coarse.inter - 1) < 0.05);
  }

  TEST_CASE("coherence ignores item order") {
    Rng rng(6);
    std::vector<std::vector<int>> ids;
    const Matrix m = two_blobs(150, rng, ids);
    std::vector<std::size_t> perm(m.rows);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<std::size_t>(perm));
    Matrix pm(m.rows, m.cols);
    std::vector<std::vector<int>> pids;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), pm.row(i).begin());
      pids.push_back(ids[perm[i]]);
    }
    const auto a = coherence_stats(m, ids, 3, 2000);
    const auto b = coherence_stats(pm, pids, 3, 2000);
    CHECK(a.coarse.intra == b.coarse.intra);
    CHECK(a.coarse.inter == b.coarse.inter);
    CHECK(a.fine.intra == b.fine.intra);
  }

  TEST_CASE("degenerate grouping is rejected") {
    Matrix m(3, 2);
    CHECK_THROWS_AS(coherence_stats(m, {{0, 0}, {0, 1}, {0, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(coherence_stats(m, {{0, 0}, {0, 1}}), std::invalid_argument);
  }

  TEST_CASE("dual tower top-k") {
    Matrix c(4, 3);
    c.row(0)[1] = 1;
    c.row(1)[0] = 1;
    c.row(2)[2] = 1;
    c.row(3)[1] = -1;
    const std::vector<float> q{1, 0, 0};
    CHECK(dual_tower_baseline(q, c, 1).front().item_id == 1);

    Rng rng(7);
    Matrix big(500, 8);
    for (float& x : big.values) x = static_cast<float>(rng.normal());
    std::vector<float> query(8);
    for (float& x : query) x = static_cast<float>(rng.normal());
    const auto top = dual_tower_baseline(query, big, 10);
    std::vector<std::pair<double, int>> all;
    for (std::size_t i = 0; i < big.rows; ++i) {
      float s = 0;
      for (std::size_t d = 0; d < 8; ++d) s += big.row(i)[d] * query[d];
      all.push_back({-static_cast<double>(s), static_cast<int>(i)});
    }
    std::sort(all.begin(), all.end());
    REQUIRE(top.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(top[i].item_id == all[i].second);
    CHECK_THROWS_AS(dual_tower_baseline(std::vector<float>(3), big, 1), std::invalid_argument);
  }

  TEST_CASE("closed loop harness counts completions") {
    BenchOptions o;
    o.concurrency = 4;
    o.workers = 2;
    o.warmup_s = 0.05;
    o.duration_s = 0.2;
    const auto row = closed_loop([](std::size_t, std::uint64_t) {}, o);
    CHECK(row.throughput > 0);
    CHECK(row.workers == 2);
    CHECK(row.concurrency == 4);
    CHECK(row.p50_ms <= row.p95_ms);
    CHECK(bench_table({row}).find("qps") != std::string::npos);
    CHECK(bench_csv({row}).rfind("engine,", 0) == 0);
  }

  TEST_CASE("median report and ablation variants") {
    EvalReport a, b, c;
    a.recall1 = 0.2, b.recall1 = 0.9, c.recall1 = 0.5;
    CHECK(median_report({a, b, c}).recall1 == 0.5);
    CHECK(median_report({a, b}).recall1 == doctest::Approx(0.55));
    for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
    const ExperimentConfig base;
    CHECK(apply_variant(base, Variant::kNoConsistency).train.omega == 0.0);
    CHECK(apply_variant(base, Variant::kNoFusion).model.fusion_mode == model::FusionMode::kVanillaCross);
    CHECK(apply_variant(base, Variant::kNoKMeans).identifiers.mode == ids::IdentifierMode::kNoKMeans);
    CHECK(apply_variant(base, Variant::kNoRqVae).identifiers.mode == ids::IdentifierMode::kHierarchicalKMeans);
    CHECK_FALSE(variant_constrained(Variant::kNoConstrained));
  }
}
