// AVX2+FMA variants of the numeric kernels. This translation unit is the
// only one compiled with -mavx2 -mfma; everything here is reached through
// the dispatch table after a runtime CPU check.
#include "storm/simd/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>
#include <cstring>

namespace storm::simd {
namespace {

inline double hsum(__m256d x) {
    __m128d lo = _mm256_castpd256_pd128(x);
    __m128d hi = _mm256_extractf128_pd(x, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swap = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swap));
}

void v_axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

double v_dot(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i),
                              acc);
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i] * y[i];
    return r;
}

double v_sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double r = hsum(acc);
    for (; i < n; ++i) r += x[i];
    return r;
}

void v_add(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(
            y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] + b[i];
}

void v_sub(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(
            y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] - b[i];
}

void v_mul(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(
            y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) y[i] = a[i] * b[i];
}

void v_scale(const double* a, double s, double* y, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) y[i] = a[i] * s;
}

void v_mul_acc(const double* a, const double* b, double* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a[i] * b[i];
}

void v_gemm(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate) {
    if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
    if (!trans_a && !trans_b) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l)
                v_axpy(a[i * k + l], b + l * n, c + i * n, n);
    } else if (trans_a && !trans_b) {
        for (std::size_t l = 0; l < k; ++l)
            for (std::size_t i = 0; i < m; ++i)
                v_axpy(a[l * m + i], b + l * n, c + i * n, n);
    } else if (!trans_a && trans_b) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                c[i * n + j] += v_dot(a + i * k, b + j * k, k);
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

void v_softmax_rows(const double* x, double* y, std::size_t rows,
                    std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * cols;
        double* yr = y + r * cols;
        double mx = xr[0];
        std::size_t j = 1;
        if (cols >= 5) {
            __m256d vm = _mm256_loadu_pd(xr);
            for (j = 4; j + 4 <= cols; j += 4)
                vm = _mm256_max_pd(vm, _mm256_loadu_pd(xr + j));
            double tmp[4];
            _mm256_storeu_pd(tmp, vm);
            mx = tmp[0];
            for (int t = 1; t < 4; ++t) mx = tmp[t] > mx ? tmp[t] : mx;
        }
        for (; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
        double denom = 0.0;
        for (std::size_t jj = 0; jj < cols; ++jj) {
            yr[jj] = std::exp(xr[jj] - mx);
            denom += yr[jj];
        }
        v_scale(yr, 1.0 / denom, yr, cols);
    }
}

void v_adamw(double* p, const double* g, double* m, double* v, std::size_t n,
             double lr, double beta1, double beta2, double eps,
             double weight_decay, double bc1, double bc2) {
    const __m256d vb1 = _mm256_set1_pd(beta1);
    const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
    const __m256d vb2 = _mm256_set1_pd(beta2);
    const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
    const __m256d vbc1 = _mm256_set1_pd(1.0 / bc1);
    const __m256d vbc2 = _mm256_set1_pd(1.0 / bc2);
    const __m256d veps = _mm256_set1_pd(eps);
    const __m256d vlr = _mm256_set1_pd(lr);
    const __m256d vwd = _mm256_set1_pd(weight_decay);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d gi = _mm256_loadu_pd(g + i);
        __m256d mi = _mm256_fmadd_pd(vb1c, gi, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
        __m256d vi = _mm256_fmadd_pd(vb2c, _mm256_mul_pd(gi, gi),
                                     _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
        _mm256_storeu_pd(m + i, mi);
        _mm256_storeu_pd(v + i, vi);
        __m256d mhat = _mm256_mul_pd(mi, vbc1);
        __m256d vhat = _mm256_mul_pd(vi, vbc2);
        __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
        __m256d pi = _mm256_loadu_pd(p + i);
        __m256d upd = _mm256_fmadd_pd(vwd, pi, _mm256_div_pd(mhat, denom));
        _mm256_storeu_pd(p + i, _mm256_fnmadd_pd(vlr, upd, pi));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
    }
}

}  // namespace

namespace detail {
const Kernels avx2_kernels = {v_axpy, v_dot,  v_sum,          v_add,
                              v_sub,  v_mul,  v_scale,        v_mul_acc,
                              v_gemm, v_softmax_rows, v_adamw};
}  // namespace detail

}  // namespace storm::simd

#else

namespace storm::simd::detail {
const Kernels avx2_kernels = scalar_kernels;
}  // namespace storm::simd::detail

#endif
