#include "pf/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace pf {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scal_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void vadd_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += x[i];
}

void vmul_scalar(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] *= x[i];
}

double sum_scalar(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max_scalar(const double* x, std::size_t n) {
    double m = x[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

void adam_scalar(double* p, const double* g, double* m, double* v,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace

const Kernels& scalar_kernels() {
    static const Kernels table = {
        "scalar",   dot_scalar, axpy_scalar, scal_scalar, vadd_scalar,
        vmul_scalar, sum_scalar, max_scalar,  adam_scalar,
    };
    return table;
}

void matmul_nn(const double* A, const double* B, double* C,
               std::size_t m, std::size_t k, std::size_t n, const Kernels& ker) {
    std::fill(C, C + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        const double* arow = A + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            ker.axpy(arow[p], B + p * n, crow, n);
        }
    }
}

void matmul_nt(const double* A, const double* B, double* C,
               std::size_t m, std::size_t k, std::size_t n, const Kernels& ker) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        double* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            crow[j] = ker.dot(arow, B + j * k, k);
        }
    }
}

void matmul_tn_acc(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n, const Kernels& ker) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        const double* brow = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            ker.axpy(arow[p], brow, C + p * n, n);
        }
    }
}

} // namespace pf
