#pragma once

#include <vector>

#include "puzzleseq/matrix.hpp"

namespace puzzleseq {

// Exact eigendecomposition of a real symmetric matrix: Householder reduction
// to tridiagonal form followed by QL iteration with implicit shifts.
// Eigenvalues are returned in ascending order; eigenvectors[.][j] (column j)
// is the unit eigenvector for eigenvalues[j]. Throws NumericError when an
// eigenvalue fails to converge.
void sym_eig(const Matrix& a, std::vector<double>& eigenvalues, Matrix& eigenvectors);

}  // namespace puzzleseq
