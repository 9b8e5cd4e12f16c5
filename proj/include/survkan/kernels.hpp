#pragma once

// Runtime-dispatched arithmetic kernels for the batched inner loops.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2 variant selected once at startup (override with SURVKAN_KERNELS=
// scalar|avx2). Reductions use a fixed 4-lane accumulation order in both
// variants so results are bit-identical across dispatch choices.

#include <cstddef>
#include <string>

namespace survkan::kernels {

struct KernelTable {
    // acc[i] += w * x[i]
    void (*scale_add)(double* acc, const double* x, double w, std::size_t n);
    // out[i] = wb * base[i] + ws * spline[i]
    void (*combine)(double* out, const double* base, const double* spline,
                    double wb, double ws, std::size_t n);
    // (1/n) * sum |x[i]|
    double (*abs_mean)(const double* x, std::size_t n);
    // sum a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // Accumulates sum f, sum f^2, sum f*y (least-squares moments).
    void (*ls_moments)(const double* f, const double* y, std::size_t n,
                       double* sf, double* sff, double* sfy);
};

const KernelTable& scalar_table();
#if defined(__x86_64__)
const KernelTable& avx2_table();
#endif

// Table chosen for this process (CPU probe + SURVKAN_KERNELS override).
const KernelTable& active();
const std::string& active_name();

inline void scale_add(double* acc, const double* x, double w, std::size_t n) {
    active().scale_add(acc, x, w, n);
}
inline void combine(double* out, const double* base, const double* spline,
                    double wb, double ws, std::size_t n) {
    active().combine(out, base, spline, wb, ws, n);
}
inline double abs_mean(const double* x, std::size_t n) {
    return active().abs_mean(x, n);
}
inline double dot(const double* a, const double* b, std::size_t n) {
    return active().dot(a, b, n);
}
inline void ls_moments(const double* f, const double* y, std::size_t n,
                       double* sf, double* sff, double* sfy) {
    active().ls_moments(f, y, n, sf, sff, sfy);
}

}  // namespace survkan::kernels
