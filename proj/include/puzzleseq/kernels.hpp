#pragma once

#include <cstdint>
#include <vector>

#include "puzzleseq/matrix.hpp"

namespace puzzleseq::kernels {

// OpenMP-parallel dense kernels. Parallelism is always over output rows (or
// independent row groups); every output element is produced by exactly one
// thread from a fixed serial inner loop, so results are bit-identical to the
// serial reference in ref_kernels.hpp for any thread count.

// C = A * B
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
Matrix matmul(const Matrix& a, const Matrix& b);

// C = A * B^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// C += A^T * B  (accumulating; caller zeroes C first when needed)
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);

// Row-wise softmax in place. Rows with all entries -inf become all zeros.
void softmax_rows(Matrix& m);

// Per-row squared-distance argmin against centroid rows; ties resolved to
// the lowest centroid index. Optional per-row min distance output.
void nearest_centroid(const Matrix& x, const Matrix& centroids,
                      std::vector<std::uint32_t>& ids,
                      std::vector<double>* min_dist2 = nullptr);

// C += Xc^T * Xc for a block of already-centered rows (covariance partial).
void covariance_acc(const Matrix& xc, Matrix& c);

}  // namespace puzzleseq::kernels
