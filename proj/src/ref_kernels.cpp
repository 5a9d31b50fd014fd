#include "puzzleseq/ref_kernels.hpp"

#include <cmath>
#include <limits>

#include "puzzleseq/errors.hpp"

namespace puzzleseq::ref {

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols != b.rows) throw ConfigError("ref matmul shape mismatch");
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(a.rows * b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols != b.cols) throw ConfigError("ref matmul_nt shape mismatch");
    // mirrors the parallel kernel's transpose-then-accumulate structure so
    // the floating-point operation order is identical
    Matrix bt(b.cols, b.rows);
    for (std::size_t j = 0; j < b.rows; ++j) {
        const double* bj = b.row(j);
        for (std::size_t k = 0; k < b.cols; ++k) {
            bt.at(k, j) = bj[k];
        }
    }
    c.rows = a.rows;
    c.cols = b.rows;
    c.data.assign(a.rows * b.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* ci = c.row(i);
        const double* ai = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* btk = bt.row(k);
            for (std::size_t j = 0; j < b.rows; ++j) {
                ci[j] += aik * btk[j];
            }
        }
    }
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.rows != b.rows) throw ConfigError("ref matmul_tn_acc shape mismatch");
    if (c.rows != a.cols || c.cols != b.cols) {
        throw ConfigError("ref matmul_tn_acc output shape mismatch");
    }
    for (std::size_t i = 0; i < a.cols; ++i) {
        double* ci = c.row(i);
        for (std::size_t k = 0; k < a.rows; ++k) {
            const double aki = a.at(k, i);
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
}

void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m.cols; ++j) {
            if (r[j] > mx) mx = r[j];
        }
        if (mx == -std::numeric_limits<double>::infinity()) {
            for (std::size_t j = 0; j < m.cols; ++j) r[j] = 0.0;
            continue;
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            r[j] = std::exp(r[j] - mx);
            sum += r[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < m.cols; ++j) r[j] *= inv;
    }
}

void nearest_centroid(const Matrix& x, const Matrix& centroids,
                      std::vector<std::uint32_t>& ids, std::vector<double>* min_dist2) {
    if (x.cols != centroids.cols) throw ConfigError("ref nearest_centroid dim mismatch");
    ids.assign(x.rows, 0);
    if (min_dist2) min_dist2->assign(x.rows, 0.0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_id = 0;
        for (std::size_t c = 0; c < centroids.rows; ++c) {
            const double* cc = centroids.row(c);
            double d = 0.0;
            for (std::size_t j = 0; j < x.cols; ++j) {
                const double t = xi[j] - cc[j];
                d += t * t;
            }
            if (d < best) {
                best = d;
                best_id = (std::uint32_t)c;
            }
        }
        ids[i] = best_id;
        if (min_dist2) (*min_dist2)[i] = best;
    }
}

void covariance_acc(const Matrix& xc, Matrix& c) {
    if (c.rows != xc.cols || c.cols != xc.cols) {
        throw ConfigError("ref covariance_acc output must be DxD");
    }
    for (std::size_t i = 0; i < xc.cols; ++i) {
        double* ci = c.row(i);
        for (std::size_t k = 0; k < xc.rows; ++k) {
            const double xki = xc.at(k, i);
            const double* xk = xc.row(k);
            for (std::size_t j = i; j < xc.cols; ++j) {
                ci[j] += xki * xk[j];
            }
        }
    }
    for (std::size_t i = 0; i < xc.cols; ++i) {
        for (std::size_t j = i + 1; j < xc.cols; ++j) {
            c.at(j, i) = c.at(i, j);
        }
    }
}

}  // namespace puzzleseq::ref
