// Benchmark comparing the OpenMP kernels against the serial reference, and
// checking that both produce bit-identical output.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>

#include "puzzleseq/kernels.hpp"
#include "puzzleseq/matrix.hpp"
#include "puzzleseq/ref_kernels.hpp"
#include "puzzleseq/rng.hpp"

using namespace puzzleseq;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m(r, c);
    Rng rng(seed);
    for (double& v : m.data) v = 2.0 * rng.uniform() - 1.0;
    return m;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
}

bool bits_equal(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

void report(const char* name, double serial_s, double parallel_s, bool identical) {
    std::printf("%-18s serial %8.4f s   openmp %8.4f s   speedup %5.2fx   %s\n", name,
                serial_s, parallel_s, serial_s / parallel_s,
                identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 3;
    if (argc > 1) reps = std::atoi(argv[1]);
    std::printf("threads: %d, best of %d reps\n", omp_get_max_threads(), reps);

    {
        const Matrix a = random_matrix(512, 512, 1);
        const Matrix b = random_matrix(512, 512, 2);
        Matrix c_ref, c_omp;
        const double ts = time_best_of(reps, [&] { ref::matmul(a, b, c_ref); });
        const double tp = time_best_of(reps, [&] { kernels::matmul(a, b, c_omp); });
        report("matmul 512^3", ts, tp, bits_equal(c_ref, c_omp));
    }
    {
        const Matrix a = random_matrix(2048, 384, 3);
        const Matrix b = random_matrix(2048, 384, 4);
        Matrix c_ref(384, 384), c_omp(384, 384);
        const double ts = time_best_of(reps, [&] {
            c_ref.fill(0.0);
            ref::matmul_tn_acc(a, b, c_ref);
        });
        const double tp = time_best_of(reps, [&] {
            c_omp.fill(0.0);
            kernels::matmul_tn_acc(a, b, c_omp);
        });
        report("matmul_tn 2048x384", ts, tp, bits_equal(c_ref, c_omp));
    }
    {
        const Matrix x = random_matrix(4096, 384, 5);
        Matrix c_ref(384, 384), c_omp(384, 384);
        const double ts = time_best_of(reps, [&] {
            c_ref.fill(0.0);
            ref::covariance_acc(x, c_ref);
        });
        const double tp = time_best_of(reps, [&] {
            c_omp.fill(0.0);
            kernels::covariance_acc(x, c_omp);
        });
        report("covariance 4096", ts, tp, bits_equal(c_ref, c_omp));
    }
    {
        const Matrix x = random_matrix(20000, 32, 6);
        const Matrix cent = random_matrix(256, 32, 7);
        std::vector<std::uint32_t> ids_ref, ids_omp;
        const double ts =
            time_best_of(reps, [&] { ref::nearest_centroid(x, cent, ids_ref); });
        const double tp =
            time_best_of(reps, [&] { kernels::nearest_centroid(x, cent, ids_omp); });
        report("assign 20k x 256", ts, tp, ids_ref == ids_omp);
    }
    {
        Matrix base = random_matrix(4096, 512, 8);
        Matrix m_ref, m_omp;
        const double ts = time_best_of(reps, [&] {
            m_ref = base;
            ref::softmax_rows(m_ref);
        });
        const double tp = time_best_of(reps, [&] {
            m_omp = base;
            kernels::softmax_rows(m_omp);
        });
        report("softmax 4096x512", ts, tp, bits_equal(m_ref, m_omp));
    }
    return 0;
}
