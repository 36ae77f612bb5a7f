// Dispatch layer for the numeric inner loops. Every kernel has a scalar
// reference implementation and, on x86-64 with AVX2+FMA, a vectorized
// variant selected at runtime. The two are equivalence-tested; the scalar
// path is the semantic definition.
#pragma once

#include <cstddef>
#include <string>

namespace storm::simd {

enum class Backend { Auto, Scalar, Avx2 };

// Selects the kernel implementations. Auto probes the CPU once.
// The STORM_SIMD environment variable ("scalar" / "avx2") is honored
// on first use unless set_backend was called explicitly.
void set_backend(Backend b);
Backend active_backend();
std::string backend_name();
bool avx2_available();

struct Kernels {
    // y[i] += a * x[i]
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    double (*dot)(const double* x, const double* y, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    void (*add)(const double* a, const double* b, double* y, std::size_t n);
    void (*sub)(const double* a, const double* b, double* y, std::size_t n);
    void (*mul)(const double* a, const double* b, double* y, std::size_t n);
    // y[i] = a[i] * s
    void (*scale)(const double* a, double s, double* y, std::size_t n);
    // y[i] += a[i] * b[i]
    void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);
    // C (m x n) = [+=] opA(A) * opB(B), row-major.
    // trans_a: A stored k x m, contributes A^T. trans_b: B stored n x k.
    void (*gemm)(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n, bool trans_a, bool trans_b,
                 bool accumulate);
    // Row-wise softmax with max subtraction, rows x cols.
    void (*softmax_rows)(const double* x, double* y, std::size_t rows,
                         std::size_t cols);
    // Decoupled-weight-decay Adam step on a flat parameter block.
    // bc1/bc2 are the bias-correction factors 1 - beta^t.
    void (*adamw)(double* p, const double* g, double* m, double* v,
                  std::size_t n, double lr, double beta1, double beta2,
                  double eps, double weight_decay, double bc1, double bc2);
};

const Kernels& active();

namespace detail {
extern const Kernels scalar_kernels;
// Null-filled when built without AVX2 support.
extern const Kernels avx2_kernels;
}  // namespace detail

}  // namespace storm::simd
