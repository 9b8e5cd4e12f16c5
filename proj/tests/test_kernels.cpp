#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <vector>

#include "survkan/kernels.hpp"

using namespace survkan;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// sizes exercising the vector body and every tail remainder
const std::size_t kSizes[] = {0, 1, 2, 3, 4, 5, 7, 8, 15, 16, 33, 100, 1023};

}  // namespace

TEST_CASE("active table is one of the known variants") {
    CHECK((kernels::active_name() == "scalar" || kernels::active_name() == "avx2"));
}

TEST_CASE("scalar kernels match naive reference") {
    std::mt19937_64 rng(11);
    const auto& t = kernels::scalar_table();
    for (std::size_t n : kSizes) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);

        double naive = 0;
        for (std::size_t i = 0; i < n; ++i) naive += a[i] * b[i];
        CHECK(t.dot(a.data(), b.data(), n) == doctest::Approx(naive).epsilon(1e-12));

        if (n > 0) {
            double s = 0;
            for (double x : a) s += std::fabs(x);
            CHECK(t.abs_mean(a.data(), n) == doctest::Approx(s / n).epsilon(1e-12));
        }

        auto acc = random_vec(rng, n);
        auto acc2 = acc;
        t.scale_add(acc.data(), a.data(), 1.7, n);
        for (std::size_t i = 0; i < n; ++i) acc2[i] += 1.7 * a[i];
        for (std::size_t i = 0; i < n; ++i) CHECK(acc[i] == doctest::Approx(acc2[i]));

        std::vector<double> out(n);
        t.combine(out.data(), a.data(), b.data(), 0.3, -1.2, n);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(out[i] == doctest::Approx(0.3 * a[i] - 1.2 * b[i]));

        double sf = 0, sff = 0, sfy = 0;
        t.ls_moments(a.data(), b.data(), n, &sf, &sff, &sfy);
        double rf = 0, rff = 0, rfy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            rf += a[i];
            rff += a[i] * a[i];
            rfy += a[i] * b[i];
        }
        CHECK(sf == doctest::Approx(rf).epsilon(1e-12));
        CHECK(sff == doctest::Approx(rff).epsilon(1e-12));
        CHECK(sfy == doctest::Approx(rfy).epsilon(1e-12));
    }
}

#if defined(__x86_64__)
TEST_CASE("avx2 kernels are bit-identical to scalar") {
    if (!__builtin_cpu_supports("avx2")) {
        MESSAGE("avx2 not available, skipping");
        return;
    }
    std::mt19937_64 rng(22);
    const auto& s = kernels::scalar_table();
    const auto& v = kernels::avx2_table();
    for (std::size_t n : kSizes) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);

        CHECK(s.dot(a.data(), b.data(), n) == v.dot(a.data(), b.data(), n));
        if (n > 0) CHECK(s.abs_mean(a.data(), n) == v.abs_mean(a.data(), n));

        auto acc1 = random_vec(rng, n);
        auto acc2 = acc1;
        s.scale_add(acc1.data(), a.data(), -0.77, n);
        v.scale_add(acc2.data(), a.data(), -0.77, n);
        CHECK(acc1 == acc2);

        std::vector<double> o1(n), o2(n);
        s.combine(o1.data(), a.data(), b.data(), 1.1, 0.25, n);
        v.combine(o2.data(), a.data(), b.data(), 1.1, 0.25, n);
        CHECK(o1 == o2);

        double sf1 = 0, sff1 = 0, sfy1 = 0, sf2 = 0, sff2 = 0, sfy2 = 0;
        s.ls_moments(a.data(), b.data(), n, &sf1, &sff1, &sfy1);
        v.ls_moments(a.data(), b.data(), n, &sf2, &sff2, &sfy2);
        CHECK(sf1 == sf2);
        CHECK(sff1 == sff2);
        CHECK(sfy1 == sfy2);
    }
}
#endif
