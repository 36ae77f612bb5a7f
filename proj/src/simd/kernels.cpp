#include "storm/simd/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace storm::simd {

namespace {

void s_axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double s_dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

double s_sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

void s_add(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void s_scale(const double* a, double s, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * s;
}

void s_mul_acc(const double* a, const double* b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

// Loop orders keep the per-element accumulation sequence identical to the
// vector path up to FMA rounding: NN/TN stream rows of B with an axpy,
// NT reduces with dot.
void s_gemm(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l)
                s_axpy(a[i * k + l], b + l * n, c + i * n, n);
    } else if (trans_a && !trans_b) {
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t i = 0; i < m; ++i)
                s_axpy(a[l * m + i], b + l * n, c + i * n, n);
    } else if (!trans_a && trans_b) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                c[i * n + j] += s_dot(a + i * k, b + j * k, k);
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t l = 0; l < k; ++l)
                    acc += a[l * m + i] * b[j * k + l];
                c[i * n + j] += acc;
            }
    }
}

void s_softmax_rows(const double* x, double* y, std::size_t rows,
                    std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        double mx = xr[0];
        for (std::size_t j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            denom += yr[j];
        }
        const double inv = 1.0 / denom;
        for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
    }
}

void s_adamw(double* p, const double* g, double* m, double* v, std::size_t n,
             double lr, double beta1, double beta2, double eps,
             double weight_decay, double bc1, double bc2) {
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
    }
}

std::atomic<const Kernels*> g_active{nullptr};
std::once_flag g_init_once;

void init_from_env() {
    Backend b = Backend::Auto;
    if (const char* env = std::getenv("STORM_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) b = Backend::Scalar;
        else if (std::strcmp(env, "avx2") == 0) b = Backend::Avx2;
    }
    if (b == Backend::Auto)
        b = avx2_available() ? Backend::Avx2 : Backend::Scalar;
    g_active.store(b == Backend::Avx2 ? &detail::avx2_kernels
                                      : &detail::scalar_kernels);
}

}  // namespace

namespace detail {
const Kernels scalar_kernels = {s_axpy, s_dot,  s_sum,          s_add,
                                s_sub,  s_mul,  s_scale,        s_mul_acc,
                                s_gemm, s_softmax_rows, s_adamw};
}  // namespace detail

bool avx2_available() {
#if defined(__x86_64__) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

void set_backend(Backend b) {
    if (b == Backend::Avx2 && !avx2_available())
        throw std::runtime_error("simd: AVX2 backend requested but unavailable");
    if (b == Backend::Auto)
        b = avx2_available() ? Backend::Avx2 : Backend::Scalar;
    g_active.store(b == Backend::Avx2 ? &detail::avx2_kernels
                                      : &detail::scalar_kernels);
}

Backend active_backend() {
    const Kernels* k = g_active.load();
    if (!k) {
        std::call_once(g_init_once, init_from_env);
        k = g_active.load();
    }
    return k == &detail::avx2_kernels ? Backend::Avx2 : Backend::Scalar;
}

std::string backend_name() {
    return active_backend() == Backend::Avx2 ? "avx2" : "scalar";
}

const Kernels& active() {
    const Kernels* k = g_active.load();
    if (!k) {
        std::call_once(g_init_once, init_from_env);
        k = g_active.load();
    }
    return *k;
}

}  // namespace storm::simd
