#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "robustmix/anticoncentration.hpp"

using namespace robustmix;

namespace {

// plateau of height 1 on [-delta, delta], linear ramp to 0 at |y| = 2 delta;
// Lipschitz constant 1 / delta
double plateau_ramp(double y, double delta) {
    const double v = 2.0 - std::abs(y) / delta;
    return std::min(1.0, std::max(0.0, v));
}

double sup_error(const UnivariatePoly& p, const std::function<double(double)>& f) {
    double worst = 0.0;
    for (int i = 0; i <= 20000; ++i) {
        const double x = -1.0 + 2.0 * i / 20000;
        worst = std::max(worst, std::abs(p(x) - f(x)));
    }
    return worst;
}

}  // namespace

TEST_CASE("jackson_approx reproduces constants and linears essentially exactly") {
    const auto one = jackson_approx([](double) { return 1.0; }, 4, 0.0);
    REQUIRE(sup_error(one, [](double) { return 1.0; }) <= 1e-10);

    for (int deg : {1, 50}) {
        const auto lin = jackson_approx([](double x) { return x; }, deg, 1.0);
        REQUIRE(sup_error(lin, [](double x) { return x; }) <= 1e-10);
    }
}

TEST_CASE("jackson_approx meets the Lipschitz error budget on a plateau ramp") {
    const double delta = 0.1;
    const auto f = [delta](double y) { return plateau_ramp(y, delta); };
    const auto p = jackson_approx(f, 1000, 1.0 / delta);
    const double err = sup_error(p, f);
    REQUIRE(err <= 6.0 * (1.0 / delta) / 1000);  // = 0.06
}

TEST_CASE("jackson_approx fails loudly when the claimed Lipschitz constant lies") {
    const auto step = [](double x) { return x >= 0 ? 1.0 : -1.0; };
    REQUIRE_THROWS_AS(jackson_approx(step, 10, 0.01), ApproximationFailed);
    REQUIRE_THROWS_AS(jackson_approx(step, 0, 1.0), InvalidDegree);
}

TEST_CASE("amplifier endpoint values and the 12th-degree threshold") {
    for (int k : {2, 12, 64}) {
        const auto a = amplifier(k);
        REQUIRE(a(1.0) == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(a(-1.0) == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(a.degree() <= k);
    }
    const auto a12 = amplifier(12);
    REQUIRE(a12(0.7) >= 1.0 - std::exp(-2.0) - 1e-12);
}

TEST_CASE("amplifier stays inside [0, 1] and decays on the left shoulder") {
    for (int k : {2, 12, 64}) {
        const auto a = amplifier(k);
        for (int i = 0; i <= 2000; ++i) {
            const double u = -1.0 + 2.0 * i / 2000;
            const double v = a(u);
            REQUIRE(v >= -1e-12);
            REQUIRE(v <= 1.0 + 1e-12);
        }
        const double ceiling = std::exp(-k / 6.0) + 1e-12;
        for (int i = 0; i <= 200; ++i) {
            const double u = -1.0 + 0.4 * i / 200;  // [-1, -3/5]
            REQUIRE(a(u) <= ceiling);
        }
    }
}

TEST_CASE("amplifier agrees with the exact integer construction at small k") {
    for (int k : {2, 4, 8, 12}) {
        const auto cheb = amplifier(k);
        const auto mono = detail::amplifier_monomial_exact(k);
        for (int i = 0; i <= 100; ++i) {
            const double u = -1.0 + 2.0 * i / 100;
            REQUIRE(cheb(u) == Catch::Approx(mono(u)).margin(1e-12));
        }
    }
}

TEST_CASE("amplifier rejects odd or tiny degrees") {
    REQUIRE_THROWS_AS(amplifier(3), InvalidDegree);
    REQUIRE_THROWS_AS(amplifier(1), InvalidDegree);
    REQUIRE_THROWS_AS(amplifier(0), InvalidDegree);
    REQUIRE_THROWS_AS(amplifier(-2), InvalidDegree);
}

TEST_CASE("growth_check accepts Chebyshev extremal cases") {
    UnivariatePoly t3;
    t3.basis = PolyBasis::Chebyshev;
    t3.coeffs = {0, 0, 0, 1};
    REQUIRE(growth_check(t3, 1.0));
    REQUIRE(growth_check(t3, 2.0));  // 26 <= 64

    UnivariatePoly t5;
    t5.basis = PolyBasis::Chebyshev;
    t5.coeffs.assign(6, 0.0);
    t5.coeffs[5] = 1.0;
    REQUIRE(growth_check(t5, 1.0));

    UnivariatePoly one;
    one.basis = PolyBasis::Monomial;
    one.coeffs = {1.0};
    REQUIRE(growth_check(one, 3.0));

    // degree 5000 at t = 10 only works through log-space evaluation
    UnivariatePoly big;
    big.basis = PolyBasis::Chebyshev;
    big.coeffs.assign(5001, 0.0);
    big.coeffs[5000] = 1.0;
    REQUIRE(growth_check(big, 10.0));
}

TEST_CASE("growth_check enforces its preconditions") {
    UnivariatePoly t2;
    t2.basis = PolyBasis::Chebyshev;
    t2.coeffs = {0, 0, 1.5};  // sup = 1.5 on [-1, 1]
    REQUIRE_THROWS_AS(growth_check(t2, 2.0), PreconditionFailed);

    UnivariatePoly ok;
    ok.basis = PolyBasis::Chebyshev;
    ok.coeffs = {0, 1};
    REQUIRE_THROWS_AS(growth_check(ok, 0.5), PreconditionFailed);
}

TEST_CASE("build_q certificate at eps = 0.25") {
    const auto cert = build_q(0.25);
    const double log1e = std::log(4.0);
    REQUIRE(cert.eps == 0.25);
    REQUIRE(cert.L == Catch::Approx(std::pow(log1e, 3.0) / 0.25).epsilon(1e-14));
    REQUIRE(cert.k_amp == 10);
    REQUIRE(cert.delta == Catch::Approx(0.25 / cert.L).epsilon(1e-14));

    REQUIRE(cert.poly(0.0) >= 1.0 - 0.25);
    REQUIRE(cert.checks.min_near_zero >= 1.0 - 0.25);
    REQUIRE(cert.checks.c_cert <= 50.0);
    REQUIRE(cert.checks.gaussian_expectation >= 0.0);
    REQUIRE(cert.checks.band_max <= 0.25 + 1e-12);
    REQUIRE(cert.checks.evenness_deviation <= 1e-10);
    REQUIRE(cert.checks.squareness_deviation <= 1e-8);

    // degree bound with the certificate's own recorded exponent
    const double allowed = std::pow(log1e, cert.checks.degree_exponent) / (0.25 * 0.25);
    REQUIRE(cert.poly.degree() <= allowed * (1.0 + 1e-12));

    // spot-check the square witness and evenness away from the grid
    for (double x : {0.0, 0.1, 0.4, 1.0, 3.7, cert.L, 1.5 * cert.L}) {
        const double g = cert.sqrt_poly(x);
        REQUIRE(cert.poly(x) == Catch::Approx(g * g).margin(1e-8 * std::max(1.0, g * g)));
        REQUIRE(cert.poly(x) == cert.poly(-x));  // exact: odd coefficients are zero
    }
}

TEST_CASE("build_q certificate at eps = 0.1") {
    const auto cert = build_q(0.1);
    REQUIRE(cert.k_amp == 16);
    REQUIRE(cert.checks.min_near_zero >= 0.9);
    REQUIRE(cert.checks.c_cert <= 50.0);
    REQUIRE(cert.checks.band_max <= 0.1 + 1e-12);
    REQUIRE(cert.poly.degree() % 4 == 0);
    // the band is wide: L = (log 10)^3 / 0.1
    REQUIRE(cert.L == Catch::Approx(std::pow(std::log(10.0), 3.0) / 0.1).epsilon(1e-14));
}

TEST_CASE("build_q is deterministic and validates its inputs") {
    const auto a = build_q(0.25);
    const auto b = build_q(0.25);
    REQUIRE(a.poly.coeffs == b.poly.coeffs);
    REQUIRE(a.sqrt_poly.coeffs == b.sqrt_poly.coeffs);

    REQUIRE_THROWS_AS(build_q(0.3), InvalidEpsilon);
    REQUIRE_THROWS_AS(build_q(0.0), InvalidEpsilon);
    REQUIRE_THROWS_AS(build_q(-0.1), InvalidEpsilon);
    REQUIRE_THROWS_AS(build_q(0.1, 0.5), PreconditionFailed);
}
