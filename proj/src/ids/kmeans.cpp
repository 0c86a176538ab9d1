#include "ace/ids/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

ACE_NAMESPACE_BEGIN
namespace ids {

namespace {

void check_dim(const Matrix& centers, std::size_t cols, const char* op) {
  if (centers.cols != cols) {
    throw std::invalid_argument(std::string(op) + ": dim mismatch, centers have " + std::to_string(centers.cols) +
                                " columns, data has " + std::to_string(cols));
  }
}

// Returns the point with the largest distance to its assigned center.
std::size_t farthest_point(const Matrix& x, const Matrix& centers, std::span<const int> assignment) {
  std::size_t best = 0;
  double best_d = -1.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double d = squared_distance(x.row(i), centers.row(static_cast<std::size_t>(assignment[i])));
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void copy_row(const Matrix& from, std::size_t i, Matrix& to, std::size_t j) {
  std::copy(from.row(i).begin(), from.row(i).end(), to.row(j).begin());
}

void full_batch(const Matrix& x, Matrix& centers, std::size_t n_iters) {
  const std::size_t k = centers.rows, d = x.cols;
  std::vector<int> assignment(x.rows, -1);
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < n_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const int c = nearest_center(centers, x.row(i));
      if (c != assignment[i]) changed = true;
      assignment[i] = c;
    }
    if (!changed && it > 0) break;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto c = static_cast<std::size_t>(assignment[i]);
      ++counts[c];
      const auto row = x.row(i);
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += row[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        centers.row(c)[j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      const std::size_t p = farthest_point(x, centers, assignment);
      copy_row(x, p, centers, c);
      assignment[p] = static_cast<int>(c);
    }
  }
}

void mini_batch(const Matrix& x, Matrix& centers, std::size_t n_iters, std::size_t batch_size, Rng& rng) {
  const std::size_t k = centers.rows, d = x.cols;
  std::vector<double> work(centers.values.begin(), centers.values.end());
  std::vector<std::size_t> counts(k, 0);
  std::vector<std::size_t> batch(batch_size);
  std::vector<int> labels(batch_size);
  for (std::size_t it = 0; it < n_iters; ++it) {
    for (auto& b : batch) b = static_cast<std::size_t>(rng.uniform_int(x.rows));
    for (std::size_t b = 0; b < batch_size; ++b) labels[b] = nearest_center(centers, x.row(batch[b]));
    for (std::size_t b = 0; b < batch_size; ++b) {
      const auto c = static_cast<std::size_t>(labels[b]);
      ++counts[c];
      const double eta = 1.0 / static_cast<double>(counts[c]);
      const auto row = x.row(batch[b]);
      for (std::size_t j = 0; j < d; ++j) work[c * d + j] = (1.0 - eta) * work[c * d + j] + eta * row[j];
    }
    for (std::size_t i = 0; i < work.size(); ++i) centers.values[i] = static_cast<float>(work[i]);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      // Never-used center: take the batch point farthest from its center.
      std::size_t best = 0;
      double best_d = -1.0;
      for (std::size_t b = 0; b < batch_size; ++b) {
        const double dist = squared_distance(x.row(batch[b]), centers.row(static_cast<std::size_t>(labels[b])));
        if (dist > best_d) {
          best_d = dist;
          best = b;
        }
      }
      copy_row(x, batch[best], centers, c);
      for (std::size_t j = 0; j < d; ++j) work[c * d + j] = centers.row(c)[j];
      counts[c] = 1;
      labels[best] = static_cast<int>(c);
    }
  }
}

}  // namespace

Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng) {
  if (k == 0) throw std::invalid_argument("kmeans: K must be positive");
  if (x.rows < k) {
    throw std::invalid_argument("kmeans: need n >= K, got n=" + std::to_string(x.rows) + " K=" + std::to_string(k));
  }
  Matrix centers(k, x.cols);
  std::vector<double> nearest(x.rows, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.uniform_int(x.rows));
  for (std::size_t c = 0; c < k; ++c) {
    copy_row(x, pick, centers, c);
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(x.row(i), centers.row(c)));
      total += nearest[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.uniform_int(x.rows));
      continue;
    }
    double target = rng.uniform() * total;
    pick = x.rows - 1;
    for (std::size_t i = 0; i < x.rows; ++i) {
      target -= nearest[i];
      if (target < 0.0 && nearest[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  return centers;
}

KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::size_t n_iters, std::size_t batch_size, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {1});
  Matrix init = kmeans_plus_plus(x, k, rng);
  return kmeans_fit_from(x, std::move(init), n_iters, batch_size, seed);
}

KMeansModel kmeans_fit_from(const Matrix& x, Matrix init, std::size_t n_iters, std::size_t batch_size,
                            std::uint64_t seed) {
  if (init.rows == 0) throw std::invalid_argument("kmeans: K must be positive");
  if (x.rows < init.rows) {
    throw std::invalid_argument("kmeans: need n >= K, got n=" + std::to_string(x.rows) + " K=" + std::to_string(init.rows));
  }
  check_dim(init, x.cols, "kmeans_fit");
  if (batch_size == 0) throw std::invalid_argument("kmeans: batch_size must be positive");
  KMeansModel model;
  model.k = init.rows;
  model.seed = seed;
  model.n_iters = n_iters;
  model.centers = std::move(init);
  if (batch_size >= x.rows) {
    full_batch(x, model.centers, n_iters);
  } else {
    Rng rng = Rng::derive(seed, {2});
    mini_batch(x, model.centers, n_iters, batch_size, rng);
  }
  return model;
}

int nearest_center(const Matrix& centers, std::span<const float> point) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.rows; ++c) {
    const double d = squared_distance(point, centers.row(c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> kmeans_assign(const KMeansModel& model, const Matrix& x) {
  check_dim(model.centers, x.cols, "kmeans_assign");
  std::vector<int> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = nearest_center(model.centers, x.row(i));
  return out;
}

Matrix center_residuals(const Matrix& x, const KMeansModel& model) {
  const auto assignment = kmeans_assign(model, x);
  return center_residuals(x, model, assignment);
}

Matrix center_residuals(const Matrix& x, const KMeansModel& model, std::span<const int> assignment) {
  check_dim(model.centers, x.cols, "center_residuals");
  if (assignment.size() != x.rows) throw std::invalid_argument("center_residuals: assignment length mismatch");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto c = model.centers.row(static_cast<std::size_t>(assignment[i]));
    const auto row = x.row(i);
    for (std::size_t j = 0; j < x.cols; ++j) out.row(i)[j] = row[j] - c[j];
  }
  return out;
}

}  // namespace ids
ACE_NAMESPACE_END
