#include <cmath>
#include <limits>
#include <set>

#include "ace/data/synth.hpp"
#include "ace/ids/identifiers.hpp"
#include "doctest.h"

using namespace ace;
using namespace ace::ids;

namespace {

Matrix blobs(std::size_t per_blob, std::uint64_t seed) {
  Rng rng(seed);
  const float cx[3] = {0, 5, 0}, cy[3] = {0, 0, 5};
  Matrix x(per_blob * 3, 2);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < per_blob; ++i) {
      x.row(b * per_blob + i)[0] = cx[b] + static_cast<float>(rng.normal());
      x.row(b * per_blob + i)[1] = cy[b] + static_cast<float>(rng.normal());
    }
  return x;
}

std::vector<int> naive_lloyd(const Matrix& x, Matrix c, int iters) {
  std::vector<int> label(x.rows);
  for (int it = 0; it < iters; ++it) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c.rows; ++j) {
        double d = 0;
        for (std::size_t t = 0; t < x.cols; ++t) d += std::pow(double(x.row(i)[t]) - double(c.row(j)[t]), 2);
        if (d < bd) bd = d, label[i] = static_cast<int>(j);
      }
    }
    for (std::size_t j = 0; j < c.rows; ++j) {
      std::vector<double> acc(x.cols, 0);
      int n = 0;
      for (std::size_t i = 0; i < x.rows; ++i)
        if (label[i] == static_cast<int>(j)) {
          ++n;
          for (std::size_t t = 0; t < x.cols; ++t) acc[t] += x.row(i)[t];
        }
      if (n)
        for (std::size_t t = 0; t < x.cols; ++t) c.row(j)[t] = static_cast<float>(acc[t] / n);
    }
  }
  return label;
}

RqVaeConfig small_rq() {
  RqVaeConfig cfg;
  cfg.hidden = {32};
  cfg.latent_dim = 8;
  cfg.codebook_size = 8;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  return cfg;
}

}  // namespace

TEST_SUITE("identifier_pipeline") {

TEST_CASE("kmeans with K=1 is the column mean") {
  Matrix x = blobs(10, 1);
  auto model = kmeans_fit(x, 1, 10, 1024, 3);
  for (std::size_t t = 0; t < 2; ++t) {
    double mean = 0;
    for (std::size_t i = 0; i < x.rows; ++i) mean += x.row(i)[t];
    CHECK(model.centers.row(0)[t] == doctest::Approx(mean / x.rows).epsilon(1e-6));
  }
  for (int a : kmeans_assign(model, x)) CHECK(a == 0);
}

TEST_CASE("full-batch kmeans matches naive Lloyd from the same init") {
  Matrix x = blobs(17, 4);
  x.rows = 50;
  x.values.resize(100);
  Rng rng(12);
  Matrix init = kmeans_plus_plus(x, 3, rng);
  auto model = kmeans_fit_from(x, init, 30, 50, 1);
  CHECK(kmeans_assign(model, x) == naive_lloyd(x, init, 30));
}

TEST_CASE("mini-batch kmeans recovers separated blobs") {
  Matrix x = blobs(200, 5);
  auto model = kmeans_fit(x, 3, 200, 32, 9);
  auto labels = kmeans_assign(model, x);
  for (std::size_t b = 0; b < 3; ++b) {
    std::set<int> seen;
    for (std::size_t i = 0; i < 200; ++i) seen.insert(labels[b * 200 + i]);
    CHECK(seen.size() <= 2);
  }
  std::set<int> all(labels.begin(), labels.end());
  CHECK(all.size() == 3);
}

TEST_CASE("kmeans_assign against brute force and tie-break") {
  Rng rng(3);
  KMeansModel m;
  m.k = 6;
  m.centers = Matrix(6, 4);
  for (auto& v : m.centers.values) v = static_cast<float>(rng.normal());
  Matrix x(100, 4);
  for (auto& v : x.values) v = static_cast<float>(rng.normal());
  auto got = kmeans_assign(m, x);
  for (std::size_t i = 0; i < 100; ++i) {
    int best = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < 6; ++c) {
      double d = 0;
      for (std::size_t t = 0; t < 4; ++t) d += std::pow(double(x.row(i)[t]) - m.centers.row(c)[t], 2);
      if (d < bd) bd = d, best = static_cast<int>(c);
    }
    CHECK(got[i] == best);
  }
  Matrix at(1, 4);
  std::copy(m.centers.row(3).begin(), m.centers.row(3).end(), at.row(0).begin());
  CHECK(kmeans_assign(m, at)[0] == 3);

  KMeansModel tie;
  tie.k = 6;
  tie.centers = Matrix(6, 2);
  for (std::size_t c = 0; c < 6; ++c) tie.centers.row(c)[0] = 10.0f + static_cast<float>(c);
  tie.centers.row(2)[0] = -1;
  tie.centers.row(5)[0] = 1;
  Matrix origin(1, 2);
  CHECK(kmeans_assign(tie, origin)[0] == 2);

  CHECK_THROWS_AS(kmeans_assign(m, Matrix(2, 3)), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_fit(Matrix(2, 3), 3, 1, 10, 1), std::invalid_argument);
}

TEST_CASE("center residuals") {
  auto corpus = data::generate_corpus({}, 7);
  auto x = corpus.embeddings();
  auto model = kmeans_fit(x, 16, 100, 1024, 1);
  auto labels = kmeans_assign(model, x);
  auto r = center_residuals(x, model, labels);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto c = model.centers.row(static_cast<std::size_t>(labels[i]));
    for (std::size_t t = 0; t < x.cols; ++t) {
      const float back = r.row(i)[t] + c[t];
      // one ulp at the operand scale
      const float scale = std::max(std::abs(x.row(i)[t]), std::abs(c[t]));
      CHECK(std::abs(back - x.row(i)[t]) <= std::nextafter(scale, 1e9f) - scale);
    }
  }
  for (std::size_t c = 0; c < 16; ++c) {
    std::vector<double> mean(x.cols, 0);
    int n = 0;
    for (std::size_t i = 0; i < x.rows; ++i)
      if (labels[i] == static_cast<int>(c)) {
        ++n;
        for (std::size_t t = 0; t < x.cols; ++t) mean[t] += r.row(i)[t];
      }
    REQUIRE(n > 0);
    double norm = 0;
    for (double v : mean) norm += (v / n) * (v / n);
    CHECK(std::sqrt(norm) < 1e-4);
  }
  Matrix one(1, x.cols);
  std::copy(model.centers.row(4).begin(), model.centers.row(4).end(), one.row(0).begin());
  for (float v : center_residuals(one, model).values) CHECK(v == 0);
}

TEST_CASE("quantizer exact hit and argmin property") {
  auto cfg = small_rq();
  RqVae model(6, cfg, 1);
  Tensor c0 = model.codebook(0), c1 = model.codebook(1);
  auto d1 = c1.mutable_data();
  std::fill(d1.begin() + 3 * 8, d1.begin() + 4 * 8, Real(0));
  std::vector<Real> z(c0.data().begin() + 7 * 8, c0.data().begin() + 8 * 8);
  auto q = model.quantize_latent(z);
  CHECK(q.indices == std::vector<int>{7, 3});
  for (Real v : q.residual) CHECK(v == 0);

  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<Real> zz(8);
    for (auto& v : zz) v = static_cast<Real>(rng.normal());
    auto qq = model.quantize_latent(zz);
    std::vector<Real> r = zz;
    for (std::size_t m = 0; m < 2; ++m) {
      const auto cb = model.codebook(m).data();
      int best = 0;
      double bd = 1e300;
      for (int e = 0; e < 8; ++e) {
        double d = 0;
        for (int t = 0; t < 8; ++t) d += std::pow(double(r[t]) - double(cb[e * 8 + t]), 2);
        if (d < bd) bd = d, best = e;
      }
      CHECK(qq.indices[m] == best);
      for (int t = 0; t < 8; ++t) r[t] = r[t] - cb[best * 8 + t];
    }
    CHECK(qq.residual == r);
  }
}

TEST_CASE("perfect autoencoder has zero loss") {
  RqVaeConfig cfg;
  cfg.hidden = {};
  cfg.latent_dim = 4;
  cfg.codebook_size = 3;
  RqVae model(4, cfg, 2);
  for (auto& e : model.params().entries()) {
    auto d = e.value.mutable_data();
    std::fill(d.begin(), d.end(), Real(0));
    if (e.name.find(".w") != std::string::npos)
      for (std::size_t i = 0; i < 4; ++i) d[i * 4 + i] = 1;
  }
  std::vector<Real> x{0.5, -1, 2, 0.25};
  auto cb0 = model.codebook(0).mutable_data();
  std::copy(x.begin(), x.end(), cb0.begin() + 4);
  RqVaeLosses parts;
  model.loss(Tensor({1, 4}, x), &parts);
  CHECK(parts.recon == 0);
  CHECK(parts.commit == 0);
  CHECK(parts.total == 0);
}

TEST_CASE("non-finite batch raises a training error") {
  RqVae model(6, small_rq(), 3);
  Matrix batch(4, 6);
  Rng rng(1);
  for (auto& v : batch.values) v = static_cast<float>(rng.normal());
  model.train_step(batch, 1e-3, 0);
  batch.values[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    model.train_step(batch, 1e-3, 17);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("17") != std::string::npos);
  }
}

TEST_CASE("training reduces reconstruction on a low-rank corpus") {
  // Points on a handful of directions: the quantizer can represent them.
  Rng rng(8);
  Matrix basis(4, 16);
  for (auto& v : basis.values) v = static_cast<float>(rng.normal());
  Matrix x(256, 16), held(64, 16);
  auto fill = [&](Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
      const std::size_t b = rng.uniform_int(4);
      const double s = rng.uniform(0.5, 1.5);
      for (std::size_t t = 0; t < 16; ++t) m.row(i)[t] = static_cast<float>(s * basis.row(b)[t]);
    }
  };
  fill(x);
  fill(held);
  RqVaeConfig cfg;
  cfg.hidden = {64, 32};
  cfg.latent_dim = 16;
  cfg.codebook_size = 16;
  cfg.epochs = 60;
  cfg.batch_size = 32;
  RqVae model(16, cfg, 4);
  Rng init(1);
  model.init_codebooks(x, init);
  const double before = model.evaluate(held).recon;
  auto log = train_rqvae(model, x, 4);
  const double after = model.evaluate(held).recon;
  CHECK(log.size() == 60);
  CHECK(after * 5 < before);
}

TEST_CASE("codebook usage") {
  RqVae model(6, small_rq(), 3);
  Matrix same(20, 6);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t t = 0; t < 6; ++t) same.row(i)[t] = 0.1f * static_cast<float>(t);
  auto u = codebook_usage_stats(model, same);
  for (std::size_t m = 0; m < 2; ++m) {
    std::size_t used = 0, total = 0;
    for (auto c : u.counts[m]) used += c > 0, total += c;
    CHECK(used == 1);
    CHECK(total == 20);
    CHECK(u.dead[m] == 7);
  }
}

TEST_CASE("unique tokens") {
  auto a = assign_unique_tokens({{5, 3, 7}, {5, 3, 7}, {5, 3, 7}});
  CHECK(a.identifiers[0].back() == 0);
  CHECK(a.identifiers[1].back() == 1);
  CHECK(a.identifiers[2].back() == 2);
  CHECK(a.table.item_of({5, 3, 7, 1}) == 1);
  CHECK(a.table.item_of({5, 3, 7, 3}) == -1);
  CHECK(a.table.counters.at({5, 3, 7}) == 3);

  auto b = assign_unique_tokens({{1, 2}, {2, 1}, {0, 0}});
  for (const auto& id : b.identifiers) CHECK(id.back() == 0);

  Rng rng(4);
  std::vector<std::vector<int>> prefixes;
  for (int i = 0; i < 500; ++i) prefixes.push_back({int(rng.uniform_int(3)), int(rng.uniform_int(3))});
  auto c = assign_unique_tokens(prefixes);
  std::set<std::vector<int>> distinct(c.identifiers.begin(), c.identifiers.end());
  CHECK(distinct.size() == 500);
  CHECK(c.table.reverse.size() == 500);

  CHECK_THROWS_AS(assign_unique_tokens({{1}, {1}, {1}}, 2), std::invalid_argument);
}

TEST_CASE("capacity arithmetic") {
  IdentifierConfig cfg;
  cfg.k = 128;
  cfg.rqvae.codebook_size = 128;
  cfg.rqvae.n_codebooks = 2;
  CHECK(prefix_capacity(cfg) == 2097152ull);
}

TEST_CASE("build identifiers end to end") {
  data::CorpusConfig cc;
  cc.n_items = 64;
  cc.n_concepts = 4;
  cc.dim = 16;
  auto corpus = data::generate_corpus(cc, 2);
  IdentifierConfig cfg;
  cfg.k = 4;
  cfg.rqvae = small_rq();
  auto built = build_identifiers(corpus.embeddings(), cfg, 9);
  REQUIRE(built.identifiers.size() == 64);
  std::set<std::vector<int>> distinct(built.identifiers.begin(), built.identifiers.end());
  CHECK(distinct.size() == 64);
  CHECK(built.layout.length() == 4);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(built.table.item_of(built.identifiers[i]) == static_cast<int>(i));
    CHECK_NOTHROW(built.layout.to_tokens(built.identifiers[i]));
  }
  auto again = build_identifiers(corpus.embeddings(), cfg, 9);
  CHECK(again.identifiers == built.identifiers);

  const auto path = std::filesystem::temp_directory_path() / "ace_unit_ids.jsonl";
  write_identifiers(path, built.identifiers);
  CHECK(read_identifiers(path) == built.identifiers);

  cfg.mode = IdentifierMode::kNoKMeans;
  auto raw = build_identifiers(corpus.embeddings(), cfg, 9);
  CHECK(raw.identifiers[0].size() == 3);
  CHECK(raw.layout.sizes.size() == 3);

  cfg.mode = IdentifierMode::kHierarchicalKMeans;
  auto tree = build_identifiers(corpus.embeddings(), cfg, 9);
  CHECK(tree.identifiers[0].size() == 4);
  std::set<std::vector<int>> tree_ids(tree.identifiers.begin(), tree.identifiers.end());
  CHECK(tree_ids.size() == 64);

  Matrix single(1, 16);
  cfg.mode = IdentifierMode::kCoarseFine;
  cfg.k = 1;
  auto one = build_identifiers(single, cfg, 1);
  REQUIRE(one.identifiers.size() == 1);
  CHECK(one.identifiers[0].size() == 4);
  CHECK(one.identifiers[0][0] == 0);
  CHECK(one.identifiers[0][3] == 0);
}

TEST_CASE("identical embeddings still get a bijection") {
  Matrix same(300, 8);
  for (std::size_t i = 0; i < 300; ++i) same.row(i)[0] = 1;
  IdentifierConfig cfg;
  cfg.k = 4;
  cfg.rqvae = small_rq();
  auto built = build_identifiers(same, cfg, 3);
  std::set<std::vector<int>> distinct(built.identifiers.begin(), built.identifiers.end());
  CHECK(distinct.size() == 300);
}

}  // TEST_SUITE
