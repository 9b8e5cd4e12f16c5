#pragma once

// B-spline basis evaluation on a uniform extended knot grid, and the
// learnable per-edge activation phi(x) = w_b * b(x) + w_s * spline(x).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace survkan {

// Uniform knots over [lo, hi] with `degree` extension knots continuing the
// spacing on each side. Basis count is grid + degree.
struct KnotVector {
    double lo = -1.0;
    double hi = 1.0;
    int grid = 5;    // G: interior intervals
    int degree = 3;  // k: spline degree
    std::vector<double> knots;  // size grid + 2*degree + 1, non-decreasing

    int basis_count() const { return grid + degree; }
    double spacing() const { return (hi - lo) / grid; }
};

KnotVector make_knots(double lo, double hi, int grid, int degree);

// All G+k basis values B_{i,k}(x). Out-of-range x extrapolates the boundary
// polynomial pieces (no clamping).
std::vector<double> basis_values(double x, const KnotVector& kv);

// Local evaluation: only degree+1 basis functions are nonzero at any x.
// Writes them to values[0..degree] and returns the index of the first.
int basis_nonzero(double x, const KnotVector& kv, double* values);

// Same, plus derivatives B'_{i,k}(x) in dvalues[0..degree].
int basis_nonzero_with_deriv(double x, const KnotVector& kv, double* values,
                             double* dvalues);

enum class BasisKind { identity, silu };

struct SymbolicEdge;  // defined in symbolic.hpp

struct Activation {
    KnotVector knots;
    std::vector<double> coeffs;  // length knots.basis_count()
    double w_b = 1.0;
    double w_s = 1.0;
    BasisKind basis_kind = BasisKind::silu;
    bool active = true;
    // Set by the symbolic module once the edge has a fitted expression.
    // Deep-copied with the activation.
    std::unique_ptr<SymbolicEdge> symbolic;

    Activation();
    Activation(const Activation&);
    Activation(Activation&&) noexcept;
    Activation& operator=(const Activation&);
    Activation& operator=(Activation&&) noexcept;
    ~Activation();
};

double basis_fn(BasisKind kind, double x);
double basis_fn_deriv(BasisKind kind, double x);

double activation_value(const Activation& a, double x);

struct ActivationGrads {
    double d_x = 0.0;
    double d_wb = 0.0;
    double d_ws = 0.0;
    std::vector<double> d_coeffs;  // dense, length basis_count
};

ActivationGrads activation_grads(const Activation& a, double x);

// Rebuilds the knot grid to cover the sample range (1% margin) and refits
// the coefficients by least squares so the new spline reproduces the old
// activation on the samples. All-identical samples widen to +-1 with a warn
// flag on the result.
struct RefreshResult {
    Activation activation;
    bool degenerate_range = false;
};
RefreshResult refresh_knots(const Activation& a, std::span<const double> samples);

}  // namespace survkan
