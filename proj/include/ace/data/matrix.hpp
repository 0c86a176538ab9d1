#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ace/config.hpp"

ACE_NAMESPACE_BEGIN

/// Dense row-major float matrix for embeddings and centroids. Always
/// 32-bit, matching the on-disk embedding format.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0f) {}

  std::span<float> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  bool empty() const { return rows == 0; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// Squared Euclidean distance accumulated in double.
inline double squared_distance(std::span<const float> a, std::span<const float> b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    total += d * d;
  }
  return total;
}

ACE_NAMESPACE_END
