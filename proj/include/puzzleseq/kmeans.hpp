#pragma once

#include <cstdint>
#include <vector>

#include "puzzleseq/matrix.hpp"

namespace puzzleseq {

struct KMeansModel {
    Matrix centroids;  // k x d
    double inertia = 0.0;
    std::size_t iterations_run = 0;
    // inertia after each assignment pass; non-increasing by construction
    std::vector<double> inertia_history;
};

// Lloyd's algorithm with k-means++ seeding. Deterministic given the seed:
// assignment ties go to the lowest centroid index, per-cluster sums run in
// row order, and empty clusters are re-seeded to the point farthest from its
// assigned centroid. A final assignment pass guarantees the returned state is
// locally optimal (every point sits at its nearest centroid).
KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::uint64_t seed,
                       std::size_t max_iter = 100, double tol = 1e-6);

std::vector<std::uint32_t> kmeans_assign(const KMeansModel& m, const Matrix& x);

}  // namespace puzzleseq
