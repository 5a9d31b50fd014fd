#include "puzzleseq/pca.hpp"

#include <cmath>
#include <cstdint>

#include "puzzleseq/eigen_sym.hpp"
#include "puzzleseq/errors.hpp"
#include "puzzleseq/kernels.hpp"

namespace puzzleseq {

namespace {

struct CovStats {
    std::size_t n = 0;
    std::vector<double> mean;
    Matrix cov;  // sample covariance (divided by n-1)
};

CovStats accumulate_cov(const BlockSource& source) {
    CovStats st;
    // pass 1: count rows and accumulate column sums
    std::vector<double> sum;
    source([&](const Matrix& block) {
        if (sum.empty()) sum.assign(block.cols, 0.0);
        if (block.cols != sum.size()) throw DataError("pca: inconsistent block width");
        for (std::size_t i = 0; i < block.rows; ++i) {
            const double* r = block.row(i);
            for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += r[j];
        }
        st.n += block.rows;
    });
    if (st.n < 2) throw DataError("pca_fit: need at least 2 samples, got " + std::to_string(st.n));
    const std::size_t dim = sum.size();
    st.mean.assign(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) st.mean[j] = sum[j] / double(st.n);

    // pass 2: accumulate (X - mean)^T (X - mean) block by block
    st.cov = Matrix::zeros(dim, dim);
    Matrix centered;
    source([&](const Matrix& block) {
        centered = block;
        for (std::size_t i = 0; i < centered.rows; ++i) {
            double* r = centered.row(i);
            for (std::size_t j = 0; j < dim; ++j) r[j] -= st.mean[j];
        }
        kernels::covariance_acc(centered, st.cov);
    });
    const double inv = 1.0 / double(st.n - 1);
    for (double& v : st.cov.data) v *= inv;
    return st;
}

// Flip each component row so its largest-magnitude entry (lowest index on
// ties) is positive.
void fix_signs(Matrix& components) {
    for (std::size_t i = 0; i < components.rows; ++i) {
        double* r = components.row(i);
        std::size_t arg = 0;
        double best = -1.0;
        for (std::size_t j = 0; j < components.cols; ++j) {
            const double a = std::abs(r[j]);
            if (a > best) {
                best = a;
                arg = j;
            }
        }
        if (r[arg] < 0.0) {
            for (std::size_t j = 0; j < components.cols; ++j) r[j] = -r[j];
        }
    }
}

PcaModel fit_from_cov(CovStats&& st, std::size_t d) {
    const std::size_t dim = st.mean.size();
    if (d < 1 || d > dim || d > st.n - 1) {
        throw ConfigError("pca_fit: d=" + std::to_string(d) + " out of range for n=" +
                          std::to_string(st.n) + ", D=" + std::to_string(dim));
    }
    std::vector<double> evals;
    Matrix evecs;
    sym_eig(st.cov, evals, evecs);

    PcaModel model;
    model.mean = std::move(st.mean);
    model.components = Matrix::zeros(d, dim);
    model.explained_variance.assign(d, 0.0);
    // eigenvalues come back ascending; take the top d from the back
    for (std::size_t i = 0; i < d; ++i) {
        const std::size_t col = dim - 1 - i;
        model.explained_variance[i] = std::max(0.0, evals[col]);
        for (std::size_t j = 0; j < dim; ++j) {
            model.components.at(i, j) = evecs.at(j, col);
        }
    }
    fix_signs(model.components);
    return model;
}

}  // namespace

PcaModel pca_fit(const Matrix& x, std::size_t d) {
    BlockSource once = [&x](const BlockVisitor& visit) { visit(x); };
    return pca_fit_stream(once, d);
}

PcaModel pca_fit_stream(const BlockSource& source, std::size_t d) {
    return fit_from_cov(accumulate_cov(source), d);
}

Matrix pca_transform(const PcaModel& m, const Matrix& x) {
    if (x.cols != m.mean.size()) {
        throw ConfigError("pca_transform: expected " + std::to_string(m.mean.size()) +
                          " columns, got " + std::to_string(x.cols));
    }
    Matrix centered = x;
    for (std::size_t i = 0; i < centered.rows; ++i) {
        double* r = centered.row(i);
        for (std::size_t j = 0; j < centered.cols; ++j) r[j] -= m.mean[j];
    }
    return kernels::matmul_nt(centered, m.components);
}

Matrix pca_inverse_transform(const PcaModel& m, const Matrix& y) {
    if (y.cols != m.components.rows) {
        throw ConfigError("pca_inverse_transform: score width mismatch");
    }
    Matrix x = kernels::matmul(y, m.components);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* r = x.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) r[j] += m.mean[j];
    }
    return x;
}

}  // namespace puzzleseq
