/*
 * Copyright 2026 The BHE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef BHE_KMEANS_HPP_
#define BHE_KMEANS_HPP_

#include <cstdint>
#include <limits>
#include <vector>

#include "bhe/common.hpp"

namespace bhe {

struct KMeansResult {
  std::vector<int> labels;
  Matrix centers;
  // Squared Euclidean distance of every point to every center (n x k).
  Matrix distances;
  // Sum of squared distances to the assigned center, recorded after every
  // assignment step.
  std::vector<double> objective_history;
  int iterations = 0;

  double objective() const { return objective_history.empty() ? 0.0 : objective_history.back(); }
};

namespace detail {

inline double assign_points(const Matrix& points, const Matrix& centers,
                            std::vector<int>& labels) {
  double objective = 0.0;
  const std::size_t k = centers.rows();
  std::vector<double> d(k);
  for (std::size_t i = 0; i < points.rows(); ++i) {
    for (std::size_t c = 0; c < k; ++c) d[c] = squared_distance(points.row(i), centers.row(c));
    const std::size_t best = argmin(d);
    labels[i] = static_cast<int>(best);
    objective += d[best];
  }
  return objective;
}

// k-means++ seeding.
inline Matrix seed_centers(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  Matrix centers(k, points.cols());
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.uniform_int(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : nearest) total += v;
      if (total > 0.0) {
        double target = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          target -= nearest[i];
          if (target < 0.0) {
            pick = i;
            break;
          }
        }
      } else {
        pick = rng.uniform_int(n);
      }
    }
    std::copy(points.row(pick).begin(), points.row(pick).end(), centers.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.row(i), centers.row(c)));
    }
  }
  return centers;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding. Stops at an assignment fixpoint
// or after max_iterations updates. An empty cluster is re-seeded to the point
// farthest from its own center.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                           int max_iterations = 300) {
  if (k < 1) throw ArgumentError("kmeans needs k >= 1");
  if (points.rows() == 0) throw ArgumentError("kmeans needs at least one point");
  if (k > points.rows()) {
    throw ArgumentError("kmeans: k = " + std::to_string(k) + " exceeds point count " +
                        std::to_string(points.rows()));
  }
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  Rng rng(seed);
  KMeansResult result;
  result.centers = detail::seed_centers(points, k, rng);
  result.labels.assign(n, 0);
  result.objective_history.push_back(detail::assign_points(points, result.centers, result.labels));

  std::vector<int> next(n, 0);
  std::vector<std::size_t> counts(k);
  for (int iter = 0; iter < max_iterations; ++iter) {
    Matrix sums(k, dim);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(result.labels[i]);
      ++counts[c];
      auto row = sums.row(c);
      const auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] += p[d];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        result.centers(c, d) = sums(c, d) / static_cast<double>(counts[c]);
      }
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        const double d = squared_distance(
            points.row(i), result.centers.row(static_cast<std::size_t>(result.labels[i])));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      taken[far] = true;
      std::copy(points.row(far).begin(), points.row(far).end(), result.centers.row(c).begin());
    }
    const double objective = detail::assign_points(points, result.centers, next);
    if (objective > result.objective_history.back()) {
      throw Error("k-means objective increased in iteration " + std::to_string(iter + 1));
    }
    result.objective_history.push_back(objective);
    ++result.iterations;
    if (next == result.labels) break;
    result.labels.swap(next);
  }

  result.distances = Matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      result.distances(i, c) = squared_distance(points.row(i), result.centers.row(c));
    }
  }
  return result;
}

}  // namespace bhe

#endif  // BHE_KMEANS_HPP_
