#include "puzzleseq/kernels.hpp"

#include <cmath>
#include <limits>

#include "puzzleseq/errors.hpp"

namespace puzzleseq::kernels {

namespace {
void check_mul(const Matrix& a, const Matrix& b, std::size_t a_dim, std::size_t b_dim) {
    if (a_dim != b_dim) {
        throw ConfigError("matmul shape mismatch: " + std::to_string(a.rows) + "x" +
                          std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                          std::to_string(b.cols));
    }
}
}  // namespace

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a, b, a.cols, b.rows);
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(a.rows * b.cols, 0.0);
    const std::int64_t n = (std::int64_t)a.rows;
#pragma omp parallel for schedule(static) if (a.rows * b.cols > 2048)
    for (std::int64_t i = 0; i < n; ++i) {
        double* ci = c.row((std::size_t)i);
        const double* ai = a.row((std::size_t)i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aik * bk[j];
            }
        }
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c;
    matmul(a, b, c);
    return c;
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a, b, a.cols, b.cols);
    // B is transposed up front so the inner loop runs contiguous over j; the
    // per-element accumulation order (k ascending) matches the plain dot
    // product bit for bit
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
    const std::int64_t n = (std::int64_t)a.rows;
#pragma omp parallel for schedule(static) if (a.rows * b.rows > 2048)
    for (std::int64_t i = 0; i < n; ++i) {
        double* ci = c.row((std::size_t)i);
        const double* ai = a.row((std::size_t)i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = ai[k];
            const double* btk = bt.row(k);
            for (std::size_t j = 0; j < b.rows; ++j) {
                ci[j] += aik * btk[j];
            }
        }
    }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    Matrix c;
    matmul_nt(a, b, c);
    return c;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a, b, a.rows, b.rows);
    if (c.rows != a.cols || c.cols != b.cols) {
        throw ConfigError("matmul_tn_acc output shape mismatch");
    }
    const std::int64_t n = (std::int64_t)a.cols;
#pragma omp parallel for schedule(static) if (a.cols * b.cols > 2048)
    for (std::int64_t i = 0; i < n; ++i) {
        double* ci = c.row((std::size_t)i);
        for (std::size_t k = 0; k < a.rows; ++k) {
            const double aki = a.at(k, (std::size_t)i);
            const double* bk = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) {
                ci[j] += aki * bk[j];
            }
        }
    }
}

void softmax_rows(Matrix& m) {
    const std::int64_t n = (std::int64_t)m.rows;
#pragma omp parallel for schedule(static) if (m.rows * m.cols > 2048)
    for (std::int64_t i = 0; i < n; ++i) {
        double* r = m.row((std::size_t)i);
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
    if (x.cols != centroids.cols) {
        throw ConfigError("nearest_centroid dimension mismatch: " + std::to_string(x.cols) +
                          " vs " + std::to_string(centroids.cols));
    }
    ids.assign(x.rows, 0);
    if (min_dist2) min_dist2->assign(x.rows, 0.0);
    const std::int64_t n = (std::int64_t)x.rows;
#pragma omp parallel for schedule(static) if (x.rows > 16)
    for (std::int64_t i = 0; i < n; ++i) {
        const double* xi = x.row((std::size_t)i);
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
        ids[(std::size_t)i] = best_id;
        if (min_dist2) (*min_dist2)[(std::size_t)i] = best;
    }
}

void covariance_acc(const Matrix& xc, Matrix& c) {
    if (c.rows != xc.cols || c.cols != xc.cols) {
        throw ConfigError("covariance_acc output must be DxD");
    }
    const std::int64_t d = (std::int64_t)xc.cols;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < d; ++i) {
        double* ci = c.row((std::size_t)i);
        for (std::size_t k = 0; k < xc.rows; ++k) {
            const double xki = xc.at(k, (std::size_t)i);
            const double* xk = xc.row(k);
            for (std::size_t j = (std::size_t)i; j < xc.cols; ++j) {
                ci[j] += xki * xk[j];
            }
        }
    }
    // mirror the upper triangle
    for (std::size_t i = 0; i < xc.cols; ++i) {
        for (std::size_t j = i + 1; j < xc.cols; ++j) {
            c.at(j, i) = c.at(i, j);
        }
    }
}

}  // namespace puzzleseq::kernels
