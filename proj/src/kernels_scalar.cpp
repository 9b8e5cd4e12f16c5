#include "survkan/kernels.hpp"

#include <cmath>

// Scalar reference kernels. Reductions accumulate into 4 independent lanes
// (element i goes to lane i%4) and fold as (s0+s2)+(s1+s3), matching the
// horizontal-add order of the AVX2 variants exactly.

namespace survkan::kernels {
namespace {

void scale_add_scalar(double* acc, const double* x, double w, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += w * x[i];
}

void combine_scalar(double* out, const double* base, const double* spline,
                    double wb, double ws, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = wb * base[i] + ws * spline[i];
}

double abs_mean_scalar(const double* x, std::size_t n) {
    if (n == 0) return 0.0;
    double lane[4] = {0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        lane[0] += std::fabs(x[i]);
        lane[1] += std::fabs(x[i + 1]);
        lane[2] += std::fabs(x[i + 2]);
        lane[3] += std::fabs(x[i + 3]);
    }
    double total = (lane[0] + lane[2]) + (lane[1] + lane[3]);
    for (; i < n; ++i) total += std::fabs(x[i]);
    return total / static_cast<double>(n);
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double lane[4] = {0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        lane[0] += a[i] * b[i];
        lane[1] += a[i + 1] * b[i + 1];
        lane[2] += a[i + 2] * b[i + 2];
        lane[3] += a[i + 3] * b[i + 3];
    }
    double total = (lane[0] + lane[2]) + (lane[1] + lane[3]);
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void ls_moments_scalar(const double* f, const double* y, std::size_t n,
                       double* sf, double* sff, double* sfy) {
    double lf[4] = {0, 0, 0, 0}, lff[4] = {0, 0, 0, 0}, lfy[4] = {0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        for (int j = 0; j < 4; ++j) {
            const double fv = f[i + j];
            lf[j] += fv;
            lff[j] += fv * fv;
            lfy[j] += fv * y[i + j];
        }
    }
    double tf = (lf[0] + lf[2]) + (lf[1] + lf[3]);
    double tff = (lff[0] + lff[2]) + (lff[1] + lff[3]);
    double tfy = (lfy[0] + lfy[2]) + (lfy[1] + lfy[3]);
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

const KernelTable& scalar_table() {
    static const KernelTable t{scale_add_scalar, combine_scalar, abs_mean_scalar,
                               dot_scalar, ls_moments_scalar};
    return t;
}

}  // namespace survkan::kernels
