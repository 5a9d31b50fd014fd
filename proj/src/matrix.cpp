#include "puzzleseq/matrix.hpp"

#include <cmath>
#include <cstdio>

namespace puzzleseq {

bool all_finite(const Matrix& m) {
    for (double v : m.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void write_matrix_csv(std::ostream& os, const Matrix& m) {
    char buf[64];
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
            os << buf;
            if (j + 1 < m.cols) os << ',';
        }
        os << '\n';
    }
}

}  // namespace puzzleseq
