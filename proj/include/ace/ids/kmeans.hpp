#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ace/data/matrix.hpp"
#include "ace/tensor/rng.hpp"

ACE_NAMESPACE_BEGIN
namespace ids {

struct KMeansModel {
  std::size_t k = 0;
  Matrix centers;
  std::uint64_t seed = 0;
  std::size_t n_iters = 0;
};

/// k-means++ seeding: first center uniform, then proportional to squared
/// distance from the nearest chosen center.
Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng);

/// Mini-batch K-Means (per-center learning rate 1/count). batch_size >= n
/// switches to full-batch Lloyd iterations, which stop early once the
/// assignment is stable. Empty clusters are re-seeded with the point
/// farthest from its current center.
KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::size_t n_iters, std::size_t batch_size, std::uint64_t seed);

/// Same as kmeans_fit but starting from the given centers.
KMeansModel kmeans_fit_from(const Matrix& x, Matrix init, std::size_t n_iters, std::size_t batch_size,
                            std::uint64_t seed);

/// Index of the nearest center, ties to the lowest index.
int nearest_center(const Matrix& centers, std::span<const float> point);
std::vector<int> kmeans_assign(const KMeansModel& model, const Matrix& x);

/// Row i becomes x_i - centers[assignment_i].
Matrix center_residuals(const Matrix& x, const KMeansModel& model);
Matrix center_residuals(const Matrix& x, const KMeansModel& model, std::span<const int> assignment);

}  // namespace ids
ACE_NAMESPACE_END
