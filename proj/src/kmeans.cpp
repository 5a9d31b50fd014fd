#include "puzzleseq/kmeans.hpp"

#include <cmath>
#include <limits>

#include "puzzleseq/errors.hpp"
#include "puzzleseq/kernels.hpp"
#include "puzzleseq/rng.hpp"

namespace puzzleseq {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double t = a[j] - b[j];
        s += t * t;
    }
    return s;
}

// k-means++ seeding: first centroid uniform, then each next centroid drawn
// with probability proportional to the squared distance to the closest
// centroid chosen so far.
Matrix kmeanspp_init(const Matrix& x, std::size_t k, Rng& rng) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    Matrix centroids(k, d);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());

    std::size_t first = (std::size_t)rng.below(n);
    for (std::size_t j = 0; j < d; ++j) centroids.at(0, j) = x.at(first, j);

    for (std::size_t c = 1; c < k; ++c) {
        const double* prev = centroids.row(c - 1);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d2 = sq_dist(x.row(i), prev, d);
            if (d2 < min_d2[i]) min_d2[i] = d2;
            total += min_d2[i];
        }
        std::size_t pick;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (acc > target) {
                    pick = i;
                    break;
                }
            }
        } else {
            // all remaining mass is zero (duplicated points); draw uniformly
            pick = (std::size_t)rng.below(n);
        }
        for (std::size_t j = 0; j < d; ++j) centroids.at(c, j) = x.at(pick, j);
    }
    return centroids;
}

}  // namespace

KMeansModel kmeans_fit(const Matrix& x, std::size_t k, std::uint64_t seed,
                       std::size_t max_iter, double tol) {
    const std::size_t n = x.rows;
    const std::size_t d = x.cols;
    if (k < 1) throw ConfigError("kmeans_fit: k must be >= 1");
    if (n < k) {
        throw ConfigError("kmeans_fit: n=" + std::to_string(n) + " < k=" + std::to_string(k));
    }

    Rng rng(seed);
    KMeansModel model;
    model.centroids = kmeanspp_init(x, k, rng);

    std::vector<std::uint32_t> assign;
    std::vector<double> dist2;
    std::vector<std::vector<std::uint32_t>> members(k);

    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        kernels::nearest_centroid(x, model.centroids, assign, &dist2);
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += dist2[i];
        model.inertia_history.push_back(inertia);
        model.inertia = inertia;
        model.iterations_run = iter + 1;

        for (auto& m : members) m.clear();
        for (std::size_t i = 0; i < n; ++i) members[assign[i]].push_back((std::uint32_t)i);

        Matrix updated(k, d);
        std::vector<std::size_t> empties;
        for (std::size_t c = 0; c < k; ++c) {
            if (members[c].empty()) {
                empties.push_back(c);
                continue;
            }
            double* row = updated.row(c);
            for (std::uint32_t i : members[c]) {
                const double* xi = x.row(i);
                for (std::size_t j = 0; j < d; ++j) row[j] += xi[j];
            }
            const double inv = 1.0 / double(members[c].size());
            for (std::size_t j = 0; j < d; ++j) row[j] *= inv;
        }

        // re-seed empty clusters to the points farthest from their assigned
        // centroid, one per empty cluster, ties to the lowest point index
        std::vector<bool> taken(n, false);
        for (std::size_t c : empties) {
            std::size_t far = 0;
            double best = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i] && dist2[i] > best) {
                    best = dist2[i];
                    far = i;
                }
            }
            taken[far] = true;
            for (std::size_t j = 0; j < d; ++j) updated.at(c, j) = x.at(far, j);
        }

        double max_shift2 = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            max_shift2 = std::max(max_shift2,
                                  sq_dist(updated.row(c), model.centroids.row(c), d));
        }
        model.centroids = std::move(updated);
        if (std::sqrt(max_shift2) < tol) break;
    }

    // final pass so assignments (and inertia) reflect the final centroids
    kernels::nearest_centroid(x, model.centroids, assign, &dist2);
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += dist2[i];
    model.inertia_history.push_back(inertia);
    model.inertia = inertia;
    return model;
}

std::vector<std::uint32_t> kmeans_assign(const KMeansModel& m, const Matrix& x) {
    std::vector<std::uint32_t> ids;
    kernels::nearest_centroid(x, m.centroids, ids);
    return ids;
}

}  // namespace puzzleseq
