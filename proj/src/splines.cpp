#include "survkan/splines.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "survkan/symbolic.hpp"

namespace survkan {

KnotVector make_knots(double lo, double hi, int grid, int degree) {
    if (!(lo < hi)) throw std::invalid_argument("make_knots: lo must be < hi");
    if (grid < 1 || degree < 1)
        throw std::invalid_argument("make_knots: grid and degree must be >= 1");
    KnotVector kv;
    kv.lo = lo;
    kv.hi = hi;
    kv.grid = grid;
    kv.degree = degree;
    const double h = (hi - lo) / grid;
    kv.knots.resize(grid + 2 * degree + 1);
    for (int i = 0; i < static_cast<int>(kv.knots.size()); ++i)
        kv.knots[i] = lo + (i - degree) * h;
    return kv;
}

namespace {

// Knot span containing x, clamped to the interior spans so out-of-range
// points evaluate the boundary polynomial piece.
inline int find_span(double x, const KnotVector& kv) {
    const int k = kv.degree;
    int s = k + static_cast<int>(std::floor((x - kv.lo) / kv.spacing()));
    return std::clamp(s, k, k + kv.grid - 1);
}

// de Boor basis values at span s: N[0..k] are B_{s-k..s,k}(x).
inline void basis_at_span(double x, const KnotVector& kv, int s, double* N) {
    const int k = kv.degree;
    const double* t = kv.knots.data();
    double left[8], right[8];  // degree capped below
    N[0] = 1.0;
    for (int j = 1; j <= k; ++j) {
        left[j] = x - t[s + 1 - j];
        right[j] = t[s + j] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double temp = N[r] / (right[r + 1] + left[j - r]);
            N[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        N[j] = saved;
    }
}

constexpr int kMaxDegree = 7;

inline void check_degree(const KnotVector& kv) {
    if (kv.degree > kMaxDegree)
        throw std::invalid_argument("spline degree above supported maximum (7)");
}

}  // namespace

int basis_nonzero(double x, const KnotVector& kv, double* values) {
    check_degree(kv);
    const int s = find_span(x, kv);
    basis_at_span(x, kv, s, values);
    return s - kv.degree;
}

int basis_nonzero_with_deriv(double x, const KnotVector& kv, double* values,
                             double* dvalues) {
    check_degree(kv);
    const int k = kv.degree;
    const int s = find_span(x, kv);
    basis_at_span(x, kv, s, values);

    // B'_{i,k} = k * (B_{i,k-1}/(t_{i+k}-t_i) - B_{i+1,k-1}/(t_{i+k+1}-t_{i+1})).
    // With uniform knots both denominators equal k*h.
    double lower[8] = {0};
    if (k == 1) {
        lower[0] = 1.0;  // degree-0 basis at span s
    } else {
        const double* t = kv.knots.data();
        double left[8], right[8];
        lower[0] = 1.0;
        for (int j = 1; j <= k - 1; ++j) {
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            double saved = 0.0;
            for (int r = 0; r < j; ++r) {
                const double temp = lower[r] / (right[r + 1] + left[j - r]);
                lower[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            lower[j] = saved;
        }
    }
    // lower[0..k-1] are B_{s-(k-1)..s, k-1}(x).
    const double inv = 1.0 / (k * kv.spacing());
    for (int r = 0; r <= k; ++r) {
        const int i = s - k + r;                 // global index of B_{i,k}
        const int lo_idx = i - (s - (k - 1));    // position of B_{i,k-1}
        const double bl = (lo_idx >= 0 && lo_idx <= k - 1) ? lower[lo_idx] : 0.0;
        const int hi_idx = lo_idx + 1;
        const double bh = (hi_idx >= 0 && hi_idx <= k - 1) ? lower[hi_idx] : 0.0;
        dvalues[r] = k * inv * (bl - bh);
    }
    return s - k;
}

std::vector<double> basis_values(double x, const KnotVector& kv) {
    std::vector<double> out(kv.basis_count(), 0.0);
    double vals[kMaxDegree + 1];
    const int first = basis_nonzero(x, kv, vals);
    for (int r = 0; r <= kv.degree; ++r) out[first + r] = vals[r];
    return out;
}

Activation::Activation() = default;
Activation::Activation(Activation&&) noexcept = default;
Activation& Activation::operator=(Activation&&) noexcept = default;
Activation::~Activation() = default;

Activation::Activation(const Activation& o)
    : knots(o.knots),
      coeffs(o.coeffs),
      w_b(o.w_b),
      w_s(o.w_s),
      basis_kind(o.basis_kind),
      active(o.active),
      symbolic(o.symbolic ? std::make_unique<SymbolicEdge>(*o.symbolic) : nullptr) {}

Activation& Activation::operator=(const Activation& o) {
    if (this == &o) return *this;
    knots = o.knots;
    coeffs = o.coeffs;
    w_b = o.w_b;
    w_s = o.w_s;
    basis_kind = o.basis_kind;
    active = o.active;
    symbolic = o.symbolic ? std::make_unique<SymbolicEdge>(*o.symbolic) : nullptr;
    return *this;
}

double basis_fn(BasisKind kind, double x) {
    if (kind == BasisKind::identity) return x;
    return x / (1.0 + std::exp(-x));
}

double basis_fn_deriv(BasisKind kind, double x) {
    if (kind == BasisKind::identity) return 1.0;
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

double activation_value(const Activation& a, double x) {
    if (!a.active) return 0.0;
    double vals[kMaxDegree + 1];
    const int first = basis_nonzero(x, a.knots, vals);
    double spline = 0.0;
    for (int r = 0; r <= a.knots.degree; ++r) spline += a.coeffs[first + r] * vals[r];
    return a.w_b * basis_fn(a.basis_kind, x) + a.w_s * spline;
}

ActivationGrads activation_grads(const Activation& a, double x) {
    ActivationGrads g;
    g.d_coeffs.assign(a.coeffs.size(), 0.0);
    double vals[kMaxDegree + 1], dvals[kMaxDegree + 1];
    const int first = basis_nonzero_with_deriv(x, a.knots, vals, dvals);
    double spline = 0.0, dspline = 0.0;
    for (int r = 0; r <= a.knots.degree; ++r) {
        spline += a.coeffs[first + r] * vals[r];
        dspline += a.coeffs[first + r] * dvals[r];
        g.d_coeffs[first + r] = a.w_s * vals[r];
    }
    g.d_ws = spline;
    g.d_wb = basis_fn(a.basis_kind, x);
    g.d_x = a.w_b * basis_fn_deriv(a.basis_kind, x) + a.w_s * dspline;
    return g;
}

RefreshResult refresh_knots(const Activation& a, std::span<const double> samples) {
    if (samples.empty())
        throw std::invalid_argument("refresh_knots: samples must be non-empty");
    double lo = samples[0], hi = samples[0];
    for (double v : samples) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    RefreshResult res;
    if (!(lo < hi)) {
        res.degenerate_range = true;
        lo -= 1.0;
        hi += 1.0;
    } else {
        const double margin = 0.01 * (hi - lo);
        lo -= margin;
        hi += margin;
    }

    Activation out = a;
    out.knots = make_knots(lo, hi, a.knots.grid, a.knots.degree);

    // Refit coefficients so the new spline matches the old spline term on
    // the sample points (the basis term is unchanged by the refit).
    const int m = out.knots.basis_count();
    const int n = static_cast<int>(samples.size());
    Eigen::MatrixXd A(n, m);
    Eigen::VectorXd y(n);
    double vals[kMaxDegree + 1];
    for (int s = 0; s < n; ++s) {
        A.row(s).setZero();
        const int first = basis_nonzero(samples[s], out.knots, vals);
        for (int r = 0; r <= out.knots.degree; ++r) A(s, first + r) = vals[r];
        // target: old spline(x) value
        double old_spline = 0.0;
        double ov[kMaxDegree + 1];
        const int of = basis_nonzero(samples[s], a.knots, ov);
        for (int r = 0; r <= a.knots.degree; ++r) old_spline += a.coeffs[of + r] * ov[r];
        y(s) = old_spline;
    }
    // Ridge-stabilized normal equations; columns with no sample support
    // otherwise make the system singular.
    Eigen::MatrixXd AtA = A.transpose() * A;
    AtA.diagonal().array() += 1e-10;
    Eigen::VectorXd c = AtA.ldlt().solve(A.transpose() * y);
    out.coeffs.assign(c.data(), c.data() + m);
    res.activation = std::move(out);
    return res;
}

}  // namespace survkan
