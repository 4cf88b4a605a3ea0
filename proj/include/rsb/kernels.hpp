#pragma once

#include <cstddef>

// Data-parallel f64 inner loops behind the tensor layer. Every kernel has a
// scalar reference implementation and, on x86-64 with AVX2+FMA, a vectorized
// variant. The active table is chosen once at startup (see dispatch.cpp) and
// can be forced for equivalence tests or via the RSB_KERNELS env var.
namespace rsb::kernels {

enum class Isa { scalar, avx2 };

struct Ops {
    const char* name;

    // All matrices row-major, accumulating: C += op(A) * op(B).
    // gemm_nn: C[m x n] += A[m x k] * B[k x n]
    // gemm_tn: C[m x n] += A[k x m]^T * B[k x n]
    // gemm_nt: C[m x n] += A[m x k] * B[n x k]^T
    void (*gemm_nn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
    void (*gemm_tn)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);
    void (*gemm_nt)(const double* a, const double* b, double* c,
                    std::size_t m, std::size_t k, std::size_t n);

    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    double (*sum_sq)(const double* x, std::size_t n);

    // mat[r, :] += bias for every row r
    void (*add_bias_rows)(double* mat, const double* bias,
                          std::size_t rows, std::size_t cols);

    // Fused bias-corrected Adam element update over one tensor.
    // bias1 = 1 - beta1^step, bias2 = 1 - beta2^step (precomputed).
    void (*adam_update)(double* w, const double* g, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double eps, double bias1, double bias2);
};

/// Best ISA supported by the running CPU.
Isa detect();

/// Kernel table for a specific ISA (for equivalence tests). Requesting avx2
/// on a CPU without it throws.
const Ops& table(Isa isa);

/// The active table: detect() by default, RSB_KERNELS=scalar|avx2 overrides.
const Ops& active();

/// Force the active table (tests). Throws if the ISA is unsupported.
void force(Isa isa);

bool avx2_available();

} // namespace rsb::kernels
