#pragma once

#include <cstddef>

namespace pf {

// Data-parallel inner loops shared by the model, the optimizer, and the
// metric code. Every entry has a scalar reference implementation; SIMD
// variants are selected once at startup from CPU features and can be
// pinned with PERSONA_FORGE_SIMD={auto,scalar,avx2}.
//
// Variants are equivalence-tested against the scalar table, not bit-matched:
// within one process the active table never changes, so results stay
// reproducible on a given machine.
struct Kernels {
    const char* name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // x *= alpha
    void (*scal)(double alpha, double* x, std::size_t n);
    // y += x
    void (*vadd)(const double* x, double* y, std::size_t n);
    // y *= x elementwise
    void (*vmul)(const double* x, double* y, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    // n >= 1
    double (*max)(const double* x, std::size_t n);
    // One Adam update over a contiguous block. bc1/bc2 are the bias
    // corrections 1-beta1^t and 1-beta2^t, precomputed by the caller.
    void (*adam_update)(double* p, const double* g, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double eps, double bc1, double bc2);
};

const Kernels& scalar_kernels();
// nullptr when the CPU (or the build) lacks AVX2+FMA.
const Kernels* avx2_kernels();
const Kernels& active_kernels();

// Row-major matmul helpers composed from the kernel table. Shapes follow
// the llm.c convention: out-of-place unless the name says _acc.

// C[m,n] = A[m,k] * B[k,n]
void matmul_nn(const double* A, const double* B, double* C,
               std::size_t m, std::size_t k, std::size_t n, const Kernels& ker);
// C[m,n] = A[m,k] * B[n,k]^T   (dot of contiguous rows)
void matmul_nt(const double* A, const double* B, double* C,
               std::size_t m, std::size_t k, std::size_t n, const Kernels& ker);
// C[k,n] += A[m,k]^T * B[m,n]  (gradient accumulation form)
void matmul_tn_acc(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n, const Kernels& ker);

inline void matmul_nn(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n) {
    matmul_nn(A, B, C, m, k, n, active_kernels());
}
inline void matmul_nt(const double* A, const double* B, double* C,
                      std::size_t m, std::size_t k, std::size_t n) {
    matmul_nt(A, B, C, m, k, n, active_kernels());
}
inline void matmul_tn_acc(const double* A, const double* B, double* C,
                          std::size_t m, std::size_t k, std::size_t n) {
    matmul_tn_acc(A, B, C, m, k, n, active_kernels());
}

} // namespace pf
