#pragma once

#include <cstddef>
#include <ostream>
#include <vector>

namespace puzzleseq {

// Dense row-major matrix of 64-bit floats. All numeric state in the project
// (PCA models, centroids, model weights, activations) lives in this type.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    static Matrix zeros(std::size_t r, std::size_t c) { return Matrix(r, c); }

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

bool all_finite(const Matrix& m);

// Debug dump, one row per line, comma separated, full double precision.
void write_matrix_csv(std::ostream& os, const Matrix& m);

}  // namespace puzzleseq
