#if defined(__x86_64__)

#include "survkan/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace survkan::kernels {
namespace {

// Fold a 4-lane accumulator as (s0+s2)+(s1+s3), same as the scalar kernels.
inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);   // s0 s1
    const __m128d hi = _mm256_extractf128_pd(v, 1); // s2 s3
    const __m128d sum = _mm_add_pd(lo, hi);         // s0+s2, s1+s3
    return _mm_cvtsd_f64(sum) + _mm_cvtsd_f64(_mm_unpackhi_pd(sum, sum));
}

inline __m256d abs_pd(__m256d v) {
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7FFFFFFFFFFFFFFFLL));
    return _mm256_and_pd(v, mask);
}

void scale_add_avx2(double* acc, const double* x, double w, std::size_t n) {
    const __m256d vw = _mm256_set1_pd(w);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d a = _mm256_loadu_pd(acc + i);
        a = _mm256_add_pd(a, _mm256_mul_pd(vw, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(acc + i, a);
    }
    for (; i < n; ++i) acc[i] += w * x[i];
}

void combine_avx2(double* out, const double* base, const double* spline,
                  double wb, double ws, std::size_t n) {
    const __m256d vb = _mm256_set1_pd(wb);
    const __m256d vs = _mm256_set1_pd(ws);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d r = _mm256_add_pd(
            _mm256_mul_pd(vb, _mm256_loadu_pd(base + i)),
            _mm256_mul_pd(vs, _mm256_loadu_pd(spline + i)));
        _mm256_storeu_pd(out + i, r);
    }
    for (; i < n; ++i) out[i] = wb * base[i] + ws * spline[i];
}

double abs_mean_avx2(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, abs_pd(_mm256_loadu_pd(x + i)));
    double total = hsum(acc);
    for (; i < n; ++i) total += std::fabs(x[i]);
    return total / static_cast<double>(n);
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                               _mm256_loadu_pd(b + i)));
    double total = hsum(acc);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void ls_moments_avx2(const double* f, const double* y, std::size_t n,
                     double* sf, double* sff, double* sfy) {
    __m256d af = _mm256_setzero_pd();
    __m256d aff = _mm256_setzero_pd();
    __m256d afy = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vf = _mm256_loadu_pd(f + i);
        const __m256d vy = _mm256_loadu_pd(y + i);
        af = _mm256_add_pd(af, vf);
        aff = _mm256_add_pd(aff, _mm256_mul_pd(vf, vf));
        afy = _mm256_add_pd(afy, _mm256_mul_pd(vf, vy));
    }
    double tf = hsum(af), tff = hsum(aff), tfy = hsum(afy);
    for (; i < n; ++i) {
        tf += f[i];
        tff += f[i] * f[i];
        tfy += f[i] * y[i];
    }
    *sf = tf;
    *sff = tff;
    *sfy = tfy;
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable t{scale_add_avx2, combine_avx2, abs_mean_avx2,
                               dot_avx2, ls_moments_avx2};
    return t;
}

}  // namespace survkan::kernels

#endif  // __x86_64__
