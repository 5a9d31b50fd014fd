#include "puzzleseq/eigen_sym.hpp"

#include <cmath>
#include <cstdlib>

#include "puzzleseq/errors.hpp"

namespace puzzleseq {

namespace {

// Householder reduction of a symmetric matrix (stored in v) to symmetric
// tridiagonal form; d receives the diagonal, e the subdiagonal, and v the
// accumulated orthogonal transformation.
void tred2(Matrix& v, std::vector<double>& d, std::vector<double>& e) {
    const std::size_t n = v.rows;
    for (std::size_t j = 0; j < n; ++j) d[j] = v.at(n - 1, j);

    for (std::size_t i = n - 1; i > 0; --i) {
        double scale = 0.0;
        double h = 0.0;
        for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
        if (scale == 0.0) {
            e[i] = d[i - 1];
            for (std::size_t j = 0; j < i; ++j) {
                d[j] = v.at(i - 1, j);
                v.at(i, j) = 0.0;
                v.at(j, i) = 0.0;
            }
        } else {
            for (std::size_t k = 0; k < i; ++k) {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            double f = d[i - 1];
            double g = std::sqrt(h);
            if (f > 0) g = -g;
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;

            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                v.at(j, i) = f;
                g = e[j] + v.at(j, j) * f;
                for (std::size_t k = j + 1; k < i; ++k) {
                    g += v.at(k, j) * d[k];
                    e[k] += v.at(k, j) * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for (std::size_t j = 0; j < i; ++j) {
                e[j] /= h;
                f += e[j] * d[j];
            }
            const double hh = f / (h + h);
            for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
            for (std::size_t j = 0; j < i; ++j) {
                f = d[j];
                g = e[j];
                for (std::size_t k = j; k < i; ++k) {
                    v.at(k, j) -= (f * e[k] + g * d[k]);
                }
                d[j] = v.at(i - 1, j);
                v.at(i, j) = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for (std::size_t i = 0; i + 1 < n; ++i) {
        v.at(n - 1, i) = v.at(i, i);
        v.at(i, i) = 1.0;
        const double h = d[i + 1];
        if (h != 0.0) {
            for (std::size_t k = 0; k <= i; ++k) d[k] = v.at(k, i + 1) / h;
            for (std::size_t j = 0; j <= i; ++j) {
                double g = 0.0;
                for (std::size_t k = 0; k <= i; ++k) g += v.at(k, i + 1) * v.at(k, j);
                for (std::size_t k = 0; k <= i; ++k) v.at(k, j) -= g * d[k];
            }
        }
        for (std::size_t k = 0; k <= i; ++k) v.at(k, i + 1) = 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) {
        d[j] = v.at(n - 1, j);
        v.at(n - 1, j) = 0.0;
    }
    v.at(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

// QL iteration with implicit shifts on the tridiagonal form.
void tql2(Matrix& v, std::vector<double>& d, std::vector<double>& e) {
    const std::size_t n = v.rows;
    for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
    e[n - 1] = 0.0;

    double f = 0.0;
    double tst1 = 0.0;
    const double eps = std::ldexp(1.0, -52);
    for (std::size_t l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        std::size_t m = l;
        while (m < n) {
            if (std::abs(e[m]) <= eps * tst1) break;
            ++m;
        }
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > 50) {
                    throw NumericError("sym_eig: eigenvalue " + std::to_string(l) +
                                       " failed to converge");
                }
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (std::size_t ii = m; ii-- > l;) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[ii];
                    h = c * p;
                    r = std::hypot(p, e[ii]);
                    e[ii + 1] = s * r;
                    s = e[ii] / r;
                    c = p / r;
                    p = c * d[ii] - s * g;
                    d[ii + 1] = h + s * (c * g + s * d[ii]);
                    for (std::size_t k = 0; k < n; ++k) {
                        h = v.at(k, ii + 1);
                        v.at(k, ii + 1) = s * v.at(k, ii) + c * h;
                        v.at(k, ii) = c * v.at(k, ii) - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // sort eigenvalues ascending, permuting eigenvector columns alongside
    for (std::size_t i = 0; i + 1 < n; ++i) {
        std::size_t k = i;
        double p = d[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            if (d[j] < p) {
                k = j;
                p = d[j];
            }
        }
        if (k != i) {
            d[k] = d[i];
            d[i] = p;
            for (std::size_t j = 0; j < n; ++j) {
                std::swap(v.at(j, i), v.at(j, k));
            }
        }
    }
}

}  // namespace

void sym_eig(const Matrix& a, std::vector<double>& eigenvalues, Matrix& eigenvectors) {
    if (a.rows != a.cols || a.rows == 0) {
        throw ConfigError("sym_eig: matrix must be square and non-empty");
    }
    const std::size_t n = a.rows;
    eigenvectors = a;
    eigenvalues.assign(n, 0.0);
    if (n == 1) {
        eigenvalues[0] = a.at(0, 0);
        eigenvectors.at(0, 0) = 1.0;
        return;
    }
    std::vector<double> e(n, 0.0);
    tred2(eigenvectors, eigenvalues, e);
    tql2(eigenvectors, eigenvalues, e);
}

}  // namespace puzzleseq
