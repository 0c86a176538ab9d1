#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "ace/data/io.hpp"
#include "ace/data/synth.hpp"
#include "ace/tensor/rng.hpp"
#include "doctest.h"

using namespace ace;
using namespace ace::data;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "ace_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Plain Lloyd's from a max-min (farthest point) seeding, several starting
// points; returns the best-inertia labelling.
std::vector<int> lloyd_oracle(const Matrix& x, std::size_t k, std::uint64_t seed) {
  std::vector<int> best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int restart = 0; restart < 5; ++restart) {
    Rng rng(seed + restart);
    Matrix c(k, x.cols);
    std::vector<double> nearest(x.rows, 1e300);
    std::size_t next = rng.uniform_int(x.rows);
    for (std::size_t j = 0; j < k; ++j) {
      std::copy(x.row(next).begin(), x.row(next).end(), c.row(j).begin());
      for (std::size_t i = 0; i < x.rows; ++i) nearest[i] = std::min(nearest[i], squared_distance(x.row(i), c.row(j)));
      next = static_cast<std::size_t>(std::max_element(nearest.begin(), nearest.end()) - nearest.begin());
    }
    std::vector<int> label(x.rows, 0);
    for (int it = 0; it < 50; ++it) {
      for (std::size_t i = 0; i < x.rows; ++i) {
        double bd = 1e300;
        for (std::size_t j = 0; j < k; ++j) {
          const double d = squared_distance(x.row(i), c.row(j));
          if (d < bd) bd = d, label[i] = static_cast<int>(j);
        }
      }
      std::vector<double> acc(k * x.cols, 0.0);
      std::vector<int> cnt(k, 0);
      for (std::size_t i = 0; i < x.rows; ++i) {
        ++cnt[label[i]];
        for (std::size_t d = 0; d < x.cols; ++d) acc[label[i] * x.cols + d] += x.row(i)[d];
      }
      for (std::size_t j = 0; j < k; ++j)
        if (cnt[j])
          for (std::size_t d = 0; d < x.cols; ++d) c.row(j)[d] = static_cast<float>(acc[j * x.cols + d] / cnt[j]);
    }
    double inertia = 0;
    for (std::size_t i = 0; i < x.rows; ++i) inertia += squared_distance(x.row(i), c.row(label[i]));
    if (inertia < best_inertia) best_inertia = inertia, best = label;
  }
  return best;
}

}  // namespace

TEST_SUITE("synth_data") {

TEST_CASE("corpus structure") {
  CorpusConfig cfg;
  auto corpus = generate_corpus(cfg, 7);
  REQUIRE(corpus.items.size() == 512);
  CHECK(corpus.concepts.rows == 16);
  std::map<int, int> per_concept;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    CHECK(corpus.items[i].item_id == static_cast<int>(i));
    CHECK(corpus.items[i].embedding.size() == 64);
    ++per_concept[corpus.items[i].concept_id];
  }
  CHECK(per_concept.size() == 16);
  for (auto& [c, n] : per_concept) CHECK(n == 32);
  for (std::size_t a = 0; a < 16; ++a)
    for (std::size_t b = a + 1; b < 16; ++b)
      CHECK(squared_distance(corpus.concepts.row(a), corpus.concepts.row(b)) >= 0.36);
  auto again = generate_corpus(cfg, 7);
  CHECK(again.embeddings() == corpus.embeddings());
}

TEST_CASE("zero noise collapses items onto their concept") {
  CorpusConfig cfg;
  cfg.noise_sigma = 0;
  auto corpus = generate_corpus(cfg, 1);
  std::map<int, std::vector<float>> seen;
  for (const auto& item : corpus.items) {
    auto [it, fresh] = seen.emplace(item.concept_id, item.embedding);
    if (!fresh) CHECK(it->second == item.embedding);
  }
}

TEST_CASE("invalid corpus configs") {
  CorpusConfig cfg;
  cfg.n_concepts = 600;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), std::invalid_argument);
  cfg = {};
  cfg.dim = 1;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), std::invalid_argument);
  cfg = {};
  cfg.noise_sigma = -1;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), std::invalid_argument);
  cfg = {};
  cfg.n_items = 0;
  CHECK_THROWS_AS(generate_corpus(cfg, 1), std::invalid_argument);
}

TEST_CASE("concepts are recoverable by Lloyd's k-means") {
  auto corpus = generate_corpus({}, 7);
  const auto labels = lloyd_oracle(corpus.embeddings(), 16, 99);
  std::map<int, std::map<int, int>> table;
  for (std::size_t i = 0; i < labels.size(); ++i) ++table[labels[i]][corpus.items[i].concept_id];
  int majority = 0;
  for (auto& [cluster, counts] : table) {
    int best = 0;
    for (auto& [c, n] : counts) best = std::max(best, n);
    majority += best;
  }
  CHECK(double(majority) / labels.size() > 0.95);
}

TEST_CASE("queries") {
  auto corpus = generate_corpus({}, 3);
  QueryConfig q;
  q.noise_rate = 0;
  q.queries_per_item = 3;
  auto records = generate_queries(corpus, q, 5);
  REQUIRE(records.size() == 512 * 3);
  const auto vocab = make_query_vocabulary(corpus, q);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    CHECK(r.query_id == static_cast<int>(i));
    CHECK(r.tokens == vocab.base_phrase(corpus.items[r.item_id].concept_id, r.item_id));
  }
  for (std::size_t n : {1u, 3u, 5u}) {
    q.queries_per_item = n;
    CHECK(generate_queries(corpus, q, 5).size() == 512 * n);
  }

  q = {};
  auto noisy = generate_queries(corpus, q, 5);
  std::size_t changed = 0, total = 0;
  for (const auto& r : noisy) {
    const auto base = vocab.base_phrase(corpus.items[r.item_id].concept_id, r.item_id);
    for (std::size_t t = 0; t < base.size(); ++t) {
      ++total;
      CHECK(r.tokens[t] < 2048);
      if (r.tokens[t] != base[t]) ++changed;
    }
  }
  const double rate = double(changed) / total;
  CHECK(rate > 0.07);
  CHECK(rate < 0.12);
  CHECK(generate_queries(corpus, q, 5) == noisy);

  q.vocab_size = 100;
  CHECK_THROWS_AS(generate_queries(corpus, q, 5), std::invalid_argument);
  q = {};
  q.noise_rate = 1.0;
  CHECK_THROWS_AS(generate_queries(corpus, q, 5), std::invalid_argument);
}

TEST_CASE("split_queries") {
  auto corpus = generate_corpus({}, 3);
  auto records = generate_queries(corpus, {}, 4);

  auto all_train = split_queries(records, {1, 0, 0}, 1);
  for (const auto& r : all_train) CHECK(r.split == Split::kTrain);

  auto split = split_queries(records, {0.8, 0.1, 0.1}, 1);
  std::map<int, std::array<int, 3>> per_item;
  std::array<int, 3> totals{};
  for (const auto& r : split) {
    ++per_item[r.item_id][static_cast<int>(r.split)];
    ++totals[static_cast<int>(r.split)];
  }
  for (auto& [item, c] : per_item) {
    CHECK(c[0] == 4);
    CHECK(c[1] + c[2] == 1);
  }
  const double n = static_cast<double>(split.size());
  CHECK(std::abs(totals[0] - 0.8 * n) <= 1);
  CHECK(std::abs(totals[1] - 0.1 * n) <= 1);
  CHECK(std::abs(totals[2] - 0.1 * n) <= 1);
  CHECK(split_queries(records, {0.8, 0.1, 0.1}, 1) == split);

  CHECK_THROWS_AS(split_queries(records, {0.5, 0.1, 0.1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_queries(records, {0, 0.5, 0.5}, 1), std::invalid_argument);

  QueryConfig one;
  one.queries_per_item = 1;
  auto singles = split_queries(generate_queries(corpus, one, 4), {0.8, 0.1, 0.1}, 1);
  for (const auto& r : singles) CHECK(r.split == Split::kTrain);
}

TEST_CASE("embedding file roundtrip and errors") {
  Rng rng(8);
  Matrix m(3, 4);
  for (auto& v : m.values) v = static_cast<float>(rng.normal());
  const auto path = temp_path("emb.bin");
  write_embeddings(path, m);
  CHECK(std::filesystem::file_size(path) == 16 + 3 * 4 * 4);
  auto back = read_embeddings(path);
  CHECK(back.rows == 3);
  CHECK(back.cols == 4);
  CHECK(std::memcmp(back.values.data(), m.values.data(), m.values.size() * 4) == 0);

  Matrix two(2, 3);
  write_embeddings(path, two);
  CHECK(std::filesystem::file_size(path) == 16 + 24);

  Matrix empty(0, 5);
  write_embeddings(path, empty);
  auto e = read_embeddings(path);
  CHECK(e.rows == 0);
  CHECK(e.cols == 5);

  CHECK_THROWS_AS(read_embeddings(path, 6), FormatError);

  write_embeddings(path, m);
  std::filesystem::resize_file(path, 20);
  try {
    read_embeddings(path);
    FAIL("expected FormatError");
  } catch (const FormatError& err) {
    CHECK(err.offset() == 20);
  }
  write_text_file(path, "ACEEMB02xxxxxxxx");
  CHECK_THROWS_AS(read_embeddings(path), FormatError);
  CHECK_THROWS_AS(read_embeddings(temp_path("missing.bin")), std::runtime_error);
}

TEST_CASE("query file roundtrip") {
  auto corpus = generate_corpus({}, 2);
  auto records = split_queries(generate_queries(corpus, {}, 2), {0.8, 0.1, 0.1}, 2);
  const auto path = temp_path("queries.jsonl");
  write_queries(path, records);
  CHECK(read_queries(path) == records);
  const auto text = read_text_file(path);
  CHECK(text.rfind("{\"query_id\":0,\"item_id\":0,\"split\":", 0) == 0);
  write_text_file(path, "{\"query_id\":0,\"item_id\":0,\"split\":\"train\",\"tokens\":[1]}\n{\"query_id\":1}\n");
  try {
    read_queries(path);
    FAIL("expected FormatError");
  } catch (const FormatError& err) {
    CHECK(err.offset() > 0);
  }
}

}  // TEST_SUITE
