// AVX2+FMA kernel variants. This TU is compiled with -mavx2 -mfma on x86-64
// (see src/CMakeLists.txt); dispatch.cpp only hands these out when the CPU
// reports the features, so no runtime guards are needed inside the loops.

#include "rsb/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define RSB_X86_64 1
#else
#define RSB_X86_64 0
#endif

#if RSB_X86_64

#include <immintrin.h>

#include <cmath>

namespace rsb::kernels::avx2_impl {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

// crow[0..n) += av * brow[0..n)
inline void fma_row(double av, const double* brow, double* crow, std::size_t n) {
    const __m256d a = _mm256_set1_pd(av);
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        __m256d c1 = _mm256_loadu_pd(crow + j + 4);
        c0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), c0);
        c1 = _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j + 4), c1);
        _mm256_storeu_pd(crow + j, c0);
        _mm256_storeu_pd(crow + j + 4, c1);
    }
    for (; j + 4 <= n; j += 4) {
        __m256d c0 = _mm256_loadu_pd(crow + j);
        c0 = _mm256_fmadd_pd(a, _mm256_loadu_pd(brow + j), c0);
        _mm256_storeu_pd(crow + j, c0);
    }
    for (; j < n; ++j) {
        crow[j] += av * brow[j];
    }
}

} // namespace

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            fma_row(arow[p], b + p * n, crow, n);
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            fma_row(arow[i], brow, c + i * n, n);
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            __m256d acc = _mm256_setzero_pd();
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p),
                                      _mm256_loadu_pd(brow + p), acc);
            }
            double s = hsum(acc);
            for (; p < k; ++p) {
                s += arow[p] * brow[p];
            }
            crow[j] += s;
        }
    }
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    fma_row(alpha, x, y, n);
}

double dot(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

double sum_sq(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        s += x[i] * x[i];
    }
    return s;
}

void add_bias_rows(double* mat, const double* bias,
                   std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = mat + r * cols;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            __m256d v = _mm256_add_pd(_mm256_loadu_pd(row + j),
                                      _mm256_loadu_pd(bias + j));
            _mm256_storeu_pd(row + j, v);
        }
        for (; j < cols; ++j) {
            row[j] += bias[j];
        }
    }
}

void adam_update(double* w, const double* g, double* m, double* v,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bias1, double bias2) {
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vc1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d vc2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vib1 = _mm256_set1_pd(1.0 / bias1);
    const __m256d vib2 = _mm256_set1_pd(1.0 / bias2);

    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gi = _mm256_loadu_pd(g + i);
        __m256d mi = _mm256_loadu_pd(m + i);
        __m256d vi = _mm256_loadu_pd(v + i);
        mi = _mm256_fmadd_pd(vb1, mi, _mm256_mul_pd(vc1, gi));
        vi = _mm256_fmadd_pd(vb2, vi, _mm256_mul_pd(vc2, _mm256_mul_pd(gi, gi)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        const __m256d mhat = _mm256_mul_pd(mi, vib1);
        const __m256d vhat = _mm256_mul_pd(vi, vib2);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom);
        _mm256_storeu_pd(w + i, _mm256_sub_pd(_mm256_loadu_pd(w + i), step));
    }
    for (; i < n; ++i) {
        const double gi = g[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        const double mhat = m[i] * (1.0 / bias1);
        const double vhat = v[i] * (1.0 / bias2);
        w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace rsb::kernels::avx2_impl

namespace rsb::kernels {

const Ops* avx2_ops() {
    static const Ops ops{
        "avx2",
        &avx2_impl::gemm_nn,
        &avx2_impl::gemm_tn,
        &avx2_impl::gemm_nt,
        &avx2_impl::axpy,
        &avx2_impl::dot,
        &avx2_impl::sum_sq,
        &avx2_impl::add_bias_rows,
        &avx2_impl::adam_update,
    };
    return &ops;
}

} // namespace rsb::kernels

#else // !RSB_X86_64

namespace rsb::kernels {
const Ops* avx2_ops() { return nullptr; }
} // namespace rsb::kernels

#endif
