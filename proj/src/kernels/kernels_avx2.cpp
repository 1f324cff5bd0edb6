// AVX2 kernel variants. This TU is compiled with -mavx2 -mfma on x86_64;
// on other targets it degrades to the scalar reference so the dispatch
// table always has something to point at.

#include "kernels_internal.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

#include <cstdint>
#endif

namespace ctcbias::kernels::avx2 {

#if defined(__AVX2__)

bool compiled_in() { return true; }

namespace {

inline float hsum256_ps(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_hadd_ps(lo, lo);
    lo = _mm_hadd_ps(lo, lo);
    return _mm_cvtss_f32(lo);
}

inline double hsum256_pd(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

}  // namespace

float dot_f32(const float* a, const float* b, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 va = _mm256_loadu_ps(a + i);
        __m256 vb = _mm256_loadu_ps(b + i);
        acc = _mm256_fmadd_ps(va, vb, acc);
    }
    float sum = hsum256_ps(acc);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vx = _mm256_loadu_ps(x + i);
        __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, vx, vy));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_f32(const float* a, const float* b, float* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 va = _mm256_loadu_ps(a + i);
        __m256 vb = _mm256_loadu_ps(b + i);
        _mm256_storeu_ps(out + i, _mm256_add_ps(va, vb));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

float max_f32(const float* x, std::size_t n) {
    if (n < 8) return scalar::max_f32(x, n);
    __m256 best = _mm256_loadu_ps(x);
    std::size_t i = 8;
    for (; i + 8 <= n; i += 8) best = _mm256_max_ps(best, _mm256_loadu_ps(x + i));
    float lanes[8];
    _mm256_storeu_ps(lanes, best);
    float m = lanes[0];
    for (int j = 1; j < 8; ++j)
        if (lanes[j] > m) m = lanes[j];
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

std::size_t argmax_f32(const float* x, std::size_t n) {
    if (n < 16) return scalar::argmax_f32(x, n);
    __m256 vmax = _mm256_loadu_ps(x);
    __m256i vidx = _mm256_setr_epi32(0, 1, 2, 3, 4, 5, 6, 7);
    __m256i step = _mm256_set1_epi32(8);
    __m256i cur = vidx;
    std::size_t i = 8;
    for (; i + 8 <= n; i += 8) {
        cur = _mm256_add_epi32(cur, step);
        __m256 vx = _mm256_loadu_ps(x + i);
        // strict > keeps the earliest index within each lane
        __m256 gt = _mm256_cmp_ps(vx, vmax, _CMP_GT_OQ);
        vmax = _mm256_blendv_ps(vmax, vx, gt);
        vidx = _mm256_blendv_epi8(vidx, cur, _mm256_castps_si256(gt));
    }
    float vals[8];
    std::int32_t idxs[8];
    _mm256_storeu_ps(vals, vmax);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(idxs), vidx);
    float best = vals[0];
    std::size_t best_i = static_cast<std::size_t>(idxs[0]);
    for (int j = 1; j < 8; ++j) {
        std::size_t cand = static_cast<std::size_t>(idxs[j]);
        if (vals[j] > best || (vals[j] == best && cand < best_i)) {
            best = vals[j];
            best_i = cand;
        }
    }
    for (; i < n; ++i)
        if (x[i] > best) {
            best = x[i];
            best_i = i;
        }
    return best_i;
}

double sumsq_f32(const float* x, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m128 lo = _mm_loadu_ps(x + i);
        __m128 hi = _mm_loadu_ps(x + i + 4);
        __m256d d0 = _mm256_cvtps_pd(lo);
        __m256d d1 = _mm256_cvtps_pd(hi);
        acc0 = _mm256_fmadd_pd(d0, d0, acc0);
        acc1 = _mm256_fmadd_pd(d1, d1, acc1);
    }
    double sum = hsum256_pd(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        double v = static_cast<double>(x[i]);
        sum += v * v;
    }
    return sum;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        acc = _mm256_fmadd_pd(va, vb, acc);
    }
    double sum = hsum256_pd(acc);
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, vx, vy));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_f64(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(a + i);
        __m256d vb = _mm256_loadu_pd(b + i);
        _mm256_storeu_pd(out + i, _mm256_add_pd(va, vb));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

double max_f64(const double* x, std::size_t n) {
    if (n < 4) return scalar::max_f64(x, n);
    __m256d best = _mm256_loadu_pd(x);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) best = _mm256_max_pd(best, _mm256_loadu_pd(x + i));
    double lanes[4];
    _mm256_storeu_pd(lanes, best);
    double m = lanes[0];
    for (int j = 1; j < 4; ++j)
        if (lanes[j] > m) m = lanes[j];
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

std::size_t argmax_f64(const double* x, std::size_t n) {
    if (n < 8) return scalar::argmax_f64(x, n);
    __m256d vmax = _mm256_loadu_pd(x);
    __m256i vidx = _mm256_setr_epi64x(0, 1, 2, 3);
    __m256i step = _mm256_set1_epi64x(4);
    __m256i cur = vidx;
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) {
        cur = _mm256_add_epi64(cur, step);
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d gt = _mm256_cmp_pd(vx, vmax, _CMP_GT_OQ);
        vmax = _mm256_blendv_pd(vmax, vx, gt);
        vidx = _mm256_blendv_epi8(vidx, cur, _mm256_castpd_si256(gt));
    }
    double vals[4];
    std::int64_t idxs[4];
    _mm256_storeu_pd(vals, vmax);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(idxs), vidx);
    double best = vals[0];
    std::size_t best_i = static_cast<std::size_t>(idxs[0]);
    for (int j = 1; j < 4; ++j) {
        std::size_t cand = static_cast<std::size_t>(idxs[j]);
        if (vals[j] > best || (vals[j] == best && cand < best_i)) {
            best = vals[j];
            best_i = cand;
        }
    }
    for (; i < n; ++i)
        if (x[i] > best) {
            best = x[i];
            best_i = i;
        }
    return best_i;
}

double sumsq_f64(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(x + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double sum = hsum256_pd(acc);
    for (; i < n; ++i) sum += x[i] * x[i];
    return sum;
}

#else  // !__AVX2__

bool compiled_in() { return false; }

float dot_f32(const float* a, const float* b, std::size_t n) { return scalar::dot_f32(a, b, n); }
void axpy_f32(float alpha, const float* x, float* y, std::size_t n) { scalar::axpy_f32(alpha, x, y, n); }
void add_f32(const float* a, const float* b, float* out, std::size_t n) { scalar::add_f32(a, b, out, n); }
float max_f32(const float* x, std::size_t n) { return scalar::max_f32(x, n); }
std::size_t argmax_f32(const float* x, std::size_t n) { return scalar::argmax_f32(x, n); }
double sumsq_f32(const float* x, std::size_t n) { return scalar::sumsq_f32(x, n); }

double dot_f64(const double* a, const double* b, std::size_t n) { return scalar::dot_f64(a, b, n); }
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) { scalar::axpy_f64(alpha, x, y, n); }
void add_f64(const double* a, const double* b, double* out, std::size_t n) { scalar::add_f64(a, b, out, n); }
double max_f64(const double* x, std::size_t n) { return scalar::max_f64(x, n); }
std::size_t argmax_f64(const double* x, std::size_t n) { return scalar::argmax_f64(x, n); }
double sumsq_f64(const double* x, std::size_t n) { return scalar::sumsq_f64(x, n); }

#endif

}  // namespace ctcbias::kernels::avx2
