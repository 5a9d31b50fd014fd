#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "puzzleseq/matrix.hpp"

namespace puzzleseq {

struct PcaModel {
    std::vector<double> mean;      // length D
    Matrix components;             // d x D, rows are principal directions
    std::vector<double> explained_variance;  // length d, descending
};

// Fit on an in-memory sample matrix (n x D). Components are the top-d
// eigenvectors of the sample covariance, ordered by descending eigenvalue.
// Sign convention: the largest-magnitude entry of each component is positive
// (ties to the lowest index), which pins the decomposition bit-for-bit.
PcaModel pca_fit(const Matrix& x, std::size_t d);

// Streaming fit for samples too large to materialize. The source must invoke
// its callback with row blocks (all blocks D columns wide) in the same fixed
// order on every call; it is called twice (mean pass, covariance pass).
using BlockVisitor = std::function<void(const Matrix&)>;
using BlockSource = std::function<void(const BlockVisitor&)>;
PcaModel pca_fit_stream(const BlockSource& source, std::size_t d);

// (X - mean) * components^T, yielding n x d scores.
Matrix pca_transform(const PcaModel& m, const Matrix& x);

// scores * components + mean; exact inverse for data in the component span.
Matrix pca_inverse_transform(const PcaModel& m, const Matrix& y);

}  // namespace puzzleseq
