#pragma once

#include <cstdint>
#include <vector>

#include "puzzleseq/matrix.hpp"

namespace puzzleseq::ref {

// Serial reference implementations of the kernels in kernels.hpp. Kept for
// tests (bit-exact comparison against the OpenMP versions) and for the
// benchmark tool. Loop bodies mirror the parallel kernels exactly.

void matmul(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
void softmax_rows(Matrix& m);
void nearest_centroid(const Matrix& x, const Matrix& centroids,
                      std::vector<std::uint32_t>& ids,
                      std::vector<double>* min_dist2 = nullptr);
void covariance_acc(const Matrix& xc, Matrix& c);

}  // namespace puzzleseq::ref
