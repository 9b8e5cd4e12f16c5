#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "survkan/splines.hpp"
#include "survkan/symbolic.hpp"

using namespace survkan;

namespace {

// Textbook recursive B-spline basis, written independently of the library's
// evaluator. Degree-0 convention: half-open [t_i, t_{i+1}), closed at the
// final knot.
double cox_de_boor(int i, int k, const std::vector<double>& t, double x) {
    if (k == 0) {
        if (t[i] <= x && x < t[i + 1]) return 1.0;
        if (x == t.back() && t[i] < t[i + 1] && t[i + 1] == t.back()) return 1.0;
        return 0.0;
    }
    double left = 0.0, right = 0.0;
    if (t[i + k] > t[i])
        left = (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(i, k - 1, t, x);
    if (t[i + k + 1] > t[i + 1])
        right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) *
                cox_de_boor(i + 1, k - 1, t, x);
    return left + right;
}

double rel_err(double got, double want) {
    return std::fabs(got - want) / std::max(1.0, std::fabs(want));
}

}  // namespace

TEST_CASE("make_knots layout") {
    const KnotVector kv = make_knots(-1.0, 1.0, 5, 3);
    CHECK(kv.basis_count() == 8);
    CHECK(kv.knots.size() == 5 + 2 * 3 + 1);
    CHECK(kv.spacing() == doctest::Approx(0.4));
    for (std::size_t i = 1; i < kv.knots.size(); ++i)
        CHECK(kv.knots[i] - kv.knots[i - 1] == doctest::Approx(0.4));
    CHECK(kv.knots[3] == doctest::Approx(-1.0));
    CHECK(kv.knots[8] == doctest::Approx(1.0));

    CHECK_THROWS_AS(make_knots(1.0, 1.0, 5, 3), std::invalid_argument);
    CHECK_THROWS_AS(make_knots(0.0, 1.0, 0, 3), std::invalid_argument);
    CHECK_THROWS_AS(make_knots(0.0, 1.0, 5, 0), std::invalid_argument);
}

TEST_CASE("basis matches the recursive oracle inside the range") {
    std::mt19937_64 rng(5);
    for (int degree : {1, 2, 3, 4}) {
        for (int grid : {3, 5, 8}) {
            const KnotVector kv = make_knots(-2.0, 1.5, grid, degree);
            std::uniform_real_distribution<double> u(-2.0, 1.5);
            for (int trial = 0; trial < 40; ++trial) {
                const double x = u(rng);
                const auto vals = basis_values(x, kv);
                REQUIRE(vals.size() == static_cast<std::size_t>(kv.basis_count()));
                for (int i = 0; i < kv.basis_count(); ++i)
                    CHECK(rel_err(vals[i], cox_de_boor(i, degree, kv.knots, x)) <
                          1e-12);
            }
        }
    }
}

TEST_CASE("partition of unity, inside and slightly outside") {
    const KnotVector kv = make_knots(-1.0, 1.0, 5, 3);
    for (double x : {-1.0, -0.999, -0.3, 0.0, 0.7, 1.0, -1.2, 1.2}) {
        const auto vals = basis_values(x, kv);
        double s = 0;
        for (double v : vals) s += v;
        CHECK(std::fabs(s - 1.0) < 1e-10);  // extrapolation keeps the identity
    }
}

TEST_CASE("local support: degree+1 nonzeros, indices agree with full vector") {
    std::mt19937_64 rng(9);
    const KnotVector kv = make_knots(-1.0, 1.0, 6, 3);
    std::uniform_real_distribution<double> u(-1.5, 1.5);
    for (int trial = 0; trial < 60; ++trial) {
        const double x = u(rng);
        double local[8];
        const int first = basis_nonzero(x, kv, local);
        const auto full = basis_values(x, kv);
        for (int i = 0; i < kv.basis_count(); ++i) {
            if (i >= first && i <= first + kv.degree)
                CHECK(full[i] == doctest::Approx(local[i - first]).epsilon(1e-14));
            else
                CHECK(full[i] == 0.0);
        }
    }
}

TEST_CASE("basis support intervals") {
    // B_{i,k} vanishes outside (t_i, t_{i+k+1})
    const KnotVector kv = make_knots(0.0, 1.0, 5, 3);
    for (int i = 0; i < kv.basis_count(); ++i) {
        const auto below = basis_values(kv.knots[i] - 1e-6, kv);
        const auto above = basis_values(kv.knots[i + kv.degree + 1] + 1e-6, kv);
        // only meaningful where the probe stays in the clamped span range
        if (kv.knots[i] - 1e-6 >= 0.0) CHECK(std::fabs(below[i]) < 1e-12);
        if (kv.knots[i + kv.degree + 1] + 1e-6 <= 1.0)
            CHECK(std::fabs(above[i]) < 1e-12);
    }
}

TEST_CASE("basis derivatives match finite differences") {
    std::mt19937_64 rng(13);
    for (int degree : {2, 3}) {
        const KnotVector kv = make_knots(-1.0, 1.0, 5, degree);
        std::uniform_real_distribution<double> u(-1.3, 1.3);
        const double h = 1e-6;
        for (int trial = 0; trial < 50; ++trial) {
            const double x = u(rng);
            double vals[8], dvals[8];
            const int first = basis_nonzero_with_deriv(x, kv, vals, dvals);
            const auto lo = basis_values(x - h, kv);
            const auto hi = basis_values(x + h, kv);
            for (int r = 0; r <= degree; ++r) {
                const double fd = (hi[first + r] - lo[first + r]) / (2 * h);
                CHECK(std::fabs(dvals[r] - fd) < 1e-5);
            }
        }
    }
}

TEST_CASE("activation gradients vs finite differences, 100 random cases") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-1.4, 1.4), w(-2.0, 2.0);
    int cases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Activation a;
        a.knots = make_knots(-1.0, 1.0, 5, 3);
        a.coeffs.resize(a.knots.basis_count());
        for (auto& c : a.coeffs) c = w(rng);
        a.w_b = w(rng);
        a.w_s = w(rng);
        a.basis_kind = trial % 2 ? BasisKind::silu : BasisKind::identity;
        const double x = u(rng);

        const ActivationGrads g = activation_grads(a, x);
        const double h = 1e-6;
        const double fd_x =
            (activation_value(a, x + h) - activation_value(a, x - h)) / (2 * h);
        CHECK(rel_err(g.d_x, fd_x) < 1e-4);

        const auto bump = [&](double* p) {
            const double save = *p;
            *p = save + h;
            const double up = activation_value(a, x);
            *p = save - h;
            const double dn = activation_value(a, x);
            *p = save;
            return (up - dn) / (2 * h);
        };
        CHECK(rel_err(g.d_wb, bump(&a.w_b)) < 1e-4);
        CHECK(rel_err(g.d_ws, bump(&a.w_s)) < 1e-4);
        for (std::size_t i = 0; i < a.coeffs.size(); ++i)
            CHECK(rel_err(g.d_coeffs[i], bump(&a.coeffs[i])) < 1e-4);
        ++cases;
    }
    CHECK(cases == 100);
}

TEST_CASE("refresh_knots refits onto the sample range") {
    std::mt19937_64 rng(3);
    Activation a;
    a.knots = make_knots(-1.0, 1.0, 5, 3);
    a.coeffs.resize(a.knots.basis_count());
    std::uniform_real_distribution<double> w(-1.0, 1.0);
    for (auto& c : a.coeffs) c = w(rng);
    a.w_b = 0.4;
    a.w_s = 1.3;
    a.basis_kind = BasisKind::silu;

    std::vector<double> samples(200);
    std::uniform_real_distribution<double> u(-2.5, 3.0);  // wider than the grid
    for (auto& s : samples) s = u(rng);

    const RefreshResult r = refresh_knots(a, samples);
    CHECK(!r.degenerate_range);
    CHECK(r.activation.knots.lo < -2.5);
    CHECK(r.activation.knots.hi > 3.0);
    CHECK(r.activation.w_b == doctest::Approx(a.w_b));
    CHECK(r.activation.basis_kind == a.basis_kind);

    // the refit is a least-squares projection, so it must beat the trivial
    // alternative of zeroing the spline term
    double sse_refit = 0, sse_zero = 0;
    Activation zeroed = a;
    for (auto& c : zeroed.coeffs) c = 0.0;
    for (double s : samples) {
        const double want = activation_value(a, s);
        sse_refit += std::pow(activation_value(r.activation, s) - want, 2);
        sse_zero += std::pow(activation_value(zeroed, s) - want, 2);
    }
    CHECK(sse_refit <= sse_zero + 1e-9);

    const std::vector<double> flat(50, 0.7);
    CHECK(refresh_knots(a, flat).degenerate_range);
}

TEST_CASE("refresh_knots is exact when the target is representable") {
    // zero spline term: the refit target is identically zero
    Activation a;
    a.knots = make_knots(-1.0, 1.0, 5, 3);
    a.coeffs.assign(a.knots.basis_count(), 0.0);
    a.w_b = -0.8;
    a.w_s = 2.0;
    a.basis_kind = BasisKind::identity;

    std::vector<double> samples;
    for (int i = 0; i < 120; ++i) samples.push_back(-2.0 + 4.5 * i / 119.0);
    const RefreshResult r = refresh_knots(a, samples);
    for (double s : samples)
        CHECK(std::fabs(activation_value(r.activation, s) -
                        activation_value(a, s)) < 1e-8);
}
