#include <cmath>
#include <algorithm>
#include <set>

#include "ace/decode/beam_search.hpp"
#include "ace/tensor/ops.hpp"
#include "doctest.h"

using namespace ace;
using namespace ace::decode;

namespace {

model::ModelConfig small(model::VocabLayout layout) {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.ffn_dim = 32;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.dropout_rate = 0.0;
  c.query_vocab_size = 50;
  c.max_len = 16;
  c.layout = std::move(layout);
  return c;
}

std::vector<std::vector<int>> random_identifiers(const model::VocabLayout& layout, std::size_t n, Rng& rng) {
  std::set<std::vector<int>> seen;
  while (seen.size() < n) {
    std::vector<int> v;
    for (std::size_t s : layout.sizes) v.push_back(static_cast<int>(rng.uniform_int(s)));
    seen.insert(layout.to_tokens(v));
  }
  std::vector<std::vector<int>> out(seen.begin(), seen.end());
  rng.shuffle(std::span<std::vector<int>>(out));
  return out;
}

std::size_t common_prefix(const std::vector<int>& a, const std::vector<int>& b) {
  std::size_t n = 0;
  while (n < a.size() && n < b.size() && a[n] == b[n]) ++n;
  return n;
}

void zero_output_layer(model::FusionModel& m) {
  for (auto& e : m.params().entries()) {
    if (e.name == "out.w" || e.name == "out.b") std::fill(e.value.mutable_data().begin(), e.value.mutable_data().end(), Real(0));
  }
}

}  // namespace

TEST_SUITE("decode_engine") {
  TEST_CASE("single identifier forms one chain") {
    const PrefixTree t = PrefixTree::build({{1, 5, 9, 12}});
    CHECK(t.node_count() == 5);
    CHECK(t.leaf_count() == 1);
    CHECK(t.depth() == 4);
    CHECK(t.lookup(std::vector<int>{1, 5, 9, 12}) == 0);
    CHECK(t.lookup(std::vector<int>{1, 5, 9, 13}) == -1);
  }

  TEST_CASE("tree accepts exactly the identifier set") {
    Rng rng(1);
    const model::VocabLayout layout{{4, 5, 5, 3}};
    const auto ids = random_identifiers(layout, 120, rng);
    std::vector<int> items;
    for (std::size_t i = 0; i < ids.size(); ++i) items.push_back(static_cast<int>(1000 + i));
    const PrefixTree t = PrefixTree::build(ids, items);
    CHECK(t.leaf_count() == ids.size());
    CHECK(t.node_count() <= 1 + ids.size() * 4);
    CHECK(t.node_count() >= 4);
    for (std::size_t i = 0; i < ids.size(); ++i) CHECK(t.lookup(ids[i]) == items[i]);

    const std::set<std::vector<int>> members(ids.begin(), ids.end());
    std::size_t rejected = 0;
    while (rejected < 1000) {
      std::vector<int> seq;
      for (std::size_t p = 0; p < 4; ++p) seq.push_back(static_cast<int>(rng.uniform_int(layout.bos())));
      if (members.count(seq)) continue;
      ++rejected;
      std::size_t longest = 0;
      for (const auto& id : ids) longest = std::max(longest, common_prefix(id, seq));
      REQUIRE(t.lookup(seq) == -1);
      REQUIRE(t.accepted_length(seq) == longest);
    }
  }

  TEST_CASE("allowed next tokens match a filter over the identifiers") {
    Rng rng(2);
    const model::VocabLayout layout{{3, 4, 4, 2}};
    const auto ids = random_identifiers(layout, 40, rng);
    const PrefixTree t = PrefixTree::build(ids);
    std::set<int> first;
    for (const auto& id : ids) first.insert(id[0]);
    CHECK(t.allowed_next({}) == std::vector<int>(first.begin(), first.end()));
    CHECK(t.allowed_next(ids[0]).empty());
    for (const auto& id : ids) {
      for (std::size_t len = 0; len < 4; ++len) {
        const std::vector<int> prefix(id.begin(), id.begin() + static_cast<std::ptrdiff_t>(len));
        std::set<int> expect;
        for (const auto& other : ids) {
          if (std::equal(prefix.begin(), prefix.end(), other.begin())) expect.insert(other[len]);
        }
        REQUIRE(t.allowed_next(prefix) == std::vector<int>(expect.begin(), expect.end()));
      }
    }
    CHECK_THROWS_AS(t.allowed_next(std::vector<int>{99}), std::invalid_argument);
  }

  TEST_CASE("tree construction errors") {
    CHECK_THROWS_AS(PrefixTree::build({{1, 2}, {1, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(PrefixTree::build({{1, 2}, {1}}), std::invalid_argument);
    CHECK_THROWS_AS(build_prefix_tree({{0, 0}}, model::VocabLayout{{2, 2, 2}}), std::invalid_argument);
    const PrefixTree empty = PrefixTree::build({});
    model::FusionModel m(small({{2, 2, 2, 2}}), 1);
    CHECK_THROWS_AS(constrained_beam_search(m, {1}, empty, 5), std::invalid_argument);
    const PrefixTree one = build_prefix_tree({{0, 1, 0, 1}}, m.config().layout);
    CHECK_THROWS_AS(constrained_beam_search(m, {1}, one, 0), std::invalid_argument);
  }

  TEST_CASE("one identifier is always returned") {
    model::FusionModel m(small({{3, 3, 3, 2}}), 2);
    const PrefixTree t = PrefixTree::build({m.config().layout.to_tokens({2, 0, 1, 1})}, {42});
    Rng rng(3);
    for (std::size_t beam : {1u, 5u, 25u}) {
      const std::vector<int> q{static_cast<int>(rng.uniform_int(50)), static_cast<int>(rng.uniform_int(50))};
      const auto out = constrained_beam_search(m, q, t, beam);
      REQUIRE(out.size() == 1);
      CHECK(out[0].item_id == 42);
    }
  }

  TEST_CASE("uniform logits return the first identifiers in ranking order") {
    model::FusionModel m(small({{3, 4, 4, 2}}), 3);
    zero_output_layer(m);
    Rng rng(4);
    auto ids = random_identifiers(m.config().layout, 30, rng);
    const PrefixTree t = PrefixTree::build(ids);
    auto sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t beam : {1u, 5u, 12u}) {
      const auto out = constrained_beam_search(m, {7, 8}, t, beam);
      REQUIRE(out.size() == beam);
      for (std::size_t i = 0; i < beam; ++i) {
        CHECK(out[i].tokens == sorted[i]);
        CHECK(out[i].score == doctest::Approx(4 * std::log(1.0 / m.config().layout.total())));
      }
    }
  }

  TEST_CASE("beam covering the corpus equals exhaustive ranking") {
    model::FusionModel m(small({{3, 4, 4, 2}}), 5);
    Rng rng(6);
    const auto ids = random_identifiers(m.config().layout, 25, rng);
    const PrefixTree t = PrefixTree::build(ids);
    for (int trial = 0; trial < 5; ++trial) {
      const std::vector<int> q{static_cast<int>(rng.uniform_int(50)), static_cast<int>(rng.uniform_int(50)), 3};
      const auto beam = constrained_beam_search(m, q, t, 25);
      const auto full = exhaustive_rank(m, q, ids);
      REQUIRE(beam.size() == full.size());
      for (std::size_t i = 0; i < beam.size(); ++i) {
        CHECK(beam[i].item_id == full[i].item_id);
        CHECK(beam[i].score == full[i].score);
      }
      for (std::size_t i = 1; i < full.size(); ++i) CHECK(full[i - 1].score >= full[i].score);
    }
  }

  TEST_CASE("unconstrained beam of one is greedy decoding") {
    model::FusionModel m(small({{3, 4, 4, 2}}), 7);
    const auto& layout = m.config().layout;
    const std::vector<int> q{4, 9, 1};
    const auto out = unconstrained_beam_search(m, q, 1);
    REQUIRE(out.size() == 1);
    const auto mem = m.memory(m.encode({q}));
    std::vector<int> prefix{static_cast<int>(layout.bos())};
    for (std::size_t t = 0; t < 4; ++t) {
      const Tensor logits = m.decoder_forward({prefix}, mem);
      const auto row = logits.data().subspan(t * layout.total(), layout.total());
      const auto lo = row.begin() + static_cast<std::ptrdiff_t>(layout.offset(t));
      const auto best = std::max_element(lo, lo + static_cast<std::ptrdiff_t>(layout.sizes[t]));
      prefix.push_back(static_cast<int>(best - row.begin()));
    }
    CHECK(out[0].tokens == std::vector<int>(prefix.begin() + 1, prefix.end()));
    CHECK(out[0].item_id == -1);
  }

  TEST_CASE("single-token positions make both searches agree") {
    model::FusionModel m(small({{1, 1, 1, 1}}), 8);
    const PrefixTree t = build_prefix_tree({{0, 0, 0, 0}}, m.config().layout);
    const auto a = constrained_beam_search(m, {3}, t, 3);
    const auto b = unconstrained_beam_search(m, {3}, 3, &t);
    REQUIRE(a.size() == 1);
    REQUIRE(b.size() == 1);
    CHECK(a[0].tokens == b[0].tokens);
    CHECK(a[0].score == b[0].score);
    CHECK(b[0].item_id == 0);
  }

  TEST_CASE("constrained results are always valid identifiers") {
    model::FusionModel m(small({{4, 5, 5, 2}}), 9);
    Rng rng(10);
    const auto ids = random_identifiers(m.config().layout, 60, rng);
    const PrefixTree t = PrefixTree::build(ids);
    for (int trial = 0; trial < 20; ++trial) {
      const std::vector<int> q{static_cast<int>(rng.uniform_int(50)), static_cast<int>(rng.uniform_int(50))};
      const std::size_t beam = 1 + rng.uniform_int(30);
      const auto out = constrained_beam_search(m, q, t, beam);
      CHECK(out.size() == std::min<std::size_t>(beam, ids.size()));
      for (std::size_t i = 0; i < out.size(); ++i) {
        REQUIRE(t.lookup(out[i].tokens) == out[i].item_id);
        REQUIRE(out[i].item_id >= 0);
        if (i) CHECK(out[i - 1].score >= out[i].score);
      }
    }
  }
}
