// anticoncentration.hpp -- certifiable anti-concentration polynomials.
//
// The centerpiece is build_q: for a target eps it constructs an even
// polynomial q that is a perfect square, is >= 1-eps near the origin, stays
// inside [0, eps] on the band 2*eps <= |x| <= L, and has small Gaussian
// expectation.  Every property is measured numerically and recorded in the
// returned certificate; construction fails loudly if any check misses.
//
// Rather than approximating a bump and amplifying it (which needs degrees in
// the hundreds of thousands once eps is small), q is built directly from a
// Chebyshev polynomial rescaled so that the band maps onto [-1, 1]:
//
//   q(x) = (s * T_m(u(x^2)))^2,   u(y) = (2y - (L^2 + 4 eps^2)) / (L^2 - 4 eps^2)
//
// with s^2 = eps / 2.  On the band, u in [-1, 1] keeps q <= eps / 2; below it
// T_m grows like cosh and m is chosen as the smallest integer that lifts
// q above 1 - eps on [-eps, eps].  The classical bump-and-amplify parameters
// (k_amp, delta) are still recorded in the certificate for reference.

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "robustmix/common.hpp"
#include "robustmix/polynomial.hpp"

namespace robustmix {

// ---------------------------------------------------------------------------
// jackson_approx: low-degree polynomial approximation of a bounded function
// on [-1, 1].  Implemented as a Chebyshev least-squares projection (sampled
// DCT); the contract is the measured sup error against the supplied
// Lipschitz constant, not the construction route.  One retry at doubled
// sampling resolution, then ApproximationFailed.

inline UnivariatePoly jackson_approx(const std::function<double(double)>& f, int degree,
                                     double lipschitz) {
    if (degree < 1) throw InvalidDegree("jackson_approx: degree >= 1 required");
    if (!(lipschitz >= 0)) throw PreconditionFailed("jackson_approx: lipschitz must be >= 0");
    const double bound = 6.0 * lipschitz / degree + 1e-10;
    const int base_samples = std::max(2048, 4 * (degree + 1));
    double measured = 0.0;
    for (int attempt = 0; attempt < 2; ++attempt) {
        const UnivariatePoly p =
            chebyshev_fit(f, degree, -1.0, 1.0, base_samples << attempt);
        measured = 0.0;
        const int grid = 20001;
        for (int i = 0; i < grid; ++i) {
            const double x = -1.0 + 2.0 * i / (grid - 1);
            measured = std::max(measured, std::abs(p(x) - f(x)));
        }
        if (measured <= bound) return p;
    }
    char msg[160];
    std::snprintf(msg, sizeof msg,
                  "jackson_approx: sup error %.6g exceeds %.6g at degree %d", measured,
                  bound, degree);
    throw ApproximationFailed(msg);
}

// ---------------------------------------------------------------------------
// amplifier: A_k(u) = sum_{j >= k/2} C(k,j) ((1+u)/2)^j ((1-u)/2)^{k-j},
// the probability that a Binomial(k, (1+u)/2) sees a majority of successes.
// A_k pushes u in [3/5, 1] up towards 1 and u in [-1, -3/5] down towards 0,
// each at rate e^{-k/6}.

namespace detail {

// Stable pointwise evaluation: all terms are nonnegative, no cancellation.
inline double amplifier_value(int k, double u) {
    const double p = 0.5 * (1.0 + u), q = 1.0 - p;
    double acc = 0.0;
    for (int j = k / 2; j <= k; ++j) {
        acc += double(binomial_u64(k, j)) * std::pow(p, j) * std::pow(q, k - j);
    }
    return acc;
}

// Exact route for cross-checks: A_k'(u) = (k/2) C(k-1, k/2-1) 2^{-(k-1)}
// (1+u)^{k/2-1} (1-u)^{k/2}, whose expansion has integer numerators that fit
// in 128 bits for k <= 64; integrate term by term in long double.
inline UnivariatePoly amplifier_monomial_exact(int k) {
    const int a = k / 2 - 1, b = k / 2;
    std::vector<__int128> conv(a + b + 1, 0);
    for (int i = 0; i <= a; ++i) {
        const __int128 ca = static_cast<__int128>(binomial_u64(a, i));
        for (int j = 0; j <= b; ++j) {
            const __int128 term = ca * static_cast<__int128>(binomial_u64(b, j));
            conv[i + j] += (j % 2 == 0) ? term : -term;
        }
    }
    const long double front =
        0.5L * k * static_cast<long double>(binomial_u64(k - 1, k / 2 - 1)) /
        std::pow(2.0L, k - 1);
    std::vector<long double> c(k + 1, 0.0L);
    for (int m = 0; m <= a + b; ++m) {
        c[m + 1] = front * static_cast<long double>(conv[m]) / (m + 1);
    }
    // pin A_k(-1) = 0
    long double at_minus1 = 0.0L;
    for (int m = 1; m <= k; ++m) at_minus1 += (m % 2 == 0 ? c[m] : -c[m]);
    c[0] = -at_minus1;
    UnivariatePoly p;
    p.basis = PolyBasis::Monomial;
    p.coeffs.resize(k + 1);
    for (int m = 0; m <= k; ++m) p.coeffs[m] = static_cast<double>(c[m]);
    return p;
}

}  // namespace detail

inline UnivariatePoly amplifier(int k) {
    if (k < 2 || k % 2 != 0) throw InvalidDegree("amplifier: k must be even and >= 2");
    UnivariatePoly p = chebyshev_fit([k](double u) { return detail::amplifier_value(k, u); },
                                     k, -1.0, 1.0, std::max(64, 4 * (k + 1)));
    p.trim();
    return p;
}

// ---------------------------------------------------------------------------
// growth_check: a polynomial bounded by 1 on [-1, 1] satisfies
// |p(t)| <= |2t|^degree for |t| >= 1.  Verified in log space so that high
// degrees and large |t| cannot overflow.

inline bool growth_check(const UnivariatePoly& p, double t) {
    if (std::abs(t) < 1.0) throw PreconditionFailed("growth_check: |t| >= 1 required");
    const UnivariatePoly cp =
        p.basis == PolyBasis::Monomial ? monomial_to_chebyshev(p, -1.0, 1.0) : p;
    double sup = 0.0;
    for (int i = 0; i < 2001; ++i) {
        const double x = -1.0 + 2.0 * i / 2000;
        sup = std::max(sup, std::abs(cp(x)));
    }
    if (sup > 1.0 + 1e-12) {
        throw PreconditionFailed("growth_check: polynomial exceeds 1 on [-1, 1]");
    }
    const auto [sign, lg] = cp.eval_log(t);
    (void)sign;
    return lg <= cp.degree() * std::log(2.0 * std::abs(t)) + 1e-12;
}

// ---------------------------------------------------------------------------
// build_q and its certificate.

struct CertificateChecks {
    double evenness_deviation = 0.0;   // max |q(x) - q(-x)| / scale over the grid
    double squareness_deviation = 0.0; // max relative |q - sqrt_poly^2|
    double min_near_zero = 0.0;        // min q over [-eps, eps], must be >= 1 - eps
    double gaussian_expectation = 0.0; // E_{x~N(0,1)} q(x)
    double c_cert = 0.0;               // gaussian_expectation / eps, must be <= 50
    double band_max = 0.0;             // max q over 2 eps <= |x| <= L, must be <= eps
    double degree_exponent = 0.0;      // C' with degree = (log 1/eps)^{C'} / eps^2
};

struct QEpsilonCertificate {
    double eps = 0.0;
    UnivariatePoly poly;       // q itself
    UnivariatePoly sqrt_poly;  // q = sqrt_poly^2, stored to witness squareness
    double L = 0.0;
    int k_amp = 0;    // reference amplifier degree for this eps
    double delta = 0.0;  // reference bump half-width eps / L
    CertificateChecks checks;
};

inline QEpsilonCertificate build_q(double eps, double C = 3.0) {
    if (!(eps > 0.0 && eps <= 0.25)) {
        throw InvalidEpsilon("build_q: eps must lie in (0, 0.25]");
    }
    if (!(C >= 1.0)) throw PreconditionFailed("build_q: C >= 1 required");

    const double log1e = std::log(1.0 / eps);
    const double L = std::pow(log1e, C) / eps;
    const double L2 = L * L, eps2 = eps * eps;
    const double B = L2 - 4.0 * eps2;

    // smallest m with s * T_m(u(eps^2)) >= sqrt(1 - eps), s^2 = eps / 2
    const double s = std::sqrt(0.5 * eps);
    const double theta1 = std::acosh((L2 + 2.0 * eps2) / B);
    const double target = std::acosh(std::sqrt(2.0 * (1.0 - eps) / eps));
    const int m = static_cast<int>(std::ceil(target / theta1));

    // T_m(u(x^2)) as a Chebyshev series in x on [-L, L]:
    // x^2 = L^2 (T_2(x/L) + 1) / 2, so u(x^2) = -4 eps^2 / B + (L^2 / B) T_2.
    UnivariatePoly u2;
    u2.basis = PolyBasis::Chebyshev;
    u2.lo = -L;
    u2.hi = L;
    u2.coeffs = {-4.0 * eps2 / B, 0.0, L2 / B};

    UnivariatePoly t_prev;  // T_0
    t_prev.basis = PolyBasis::Chebyshev;
    t_prev.lo = -L;
    t_prev.hi = L;
    t_prev.coeffs = {1.0};
    UnivariatePoly t_cur = u2;  // T_1(u(x^2))
    for (int j = 2; j <= m; ++j) {
        UnivariatePoly t_next = multiply_chebyshev(u2, t_cur);
        for (double& c : t_next.coeffs) c *= 2.0;
        for (std::size_t i = 0; i < t_prev.coeffs.size(); ++i) {
            t_next.coeffs[i] -= t_prev.coeffs[i];
        }
        t_prev = std::move(t_cur);
        t_cur = std::move(t_next);
    }
    UnivariatePoly g = (m == 0) ? t_prev : t_cur;
    for (double& c : g.coeffs) c *= s;

    QEpsilonCertificate cert;
    cert.eps = eps;
    cert.sqrt_poly = g;
    cert.poly = multiply_chebyshev(g, g);
    // even by construction: only even Chebyshev indices are populated, but
    // pin exact zeros in case roundoff ever leaks in
    for (std::size_t i = 1; i < cert.poly.coeffs.size(); i += 2) cert.poly.coeffs[i] = 0.0;
    cert.L = L;
    const int k_raw = static_cast<int>(std::ceil(6.0 * log1e)) + 1;
    cert.k_amp = k_raw + (k_raw % 2);
    cert.delta = eps / L;

    const UnivariatePoly& q = cert.poly;
    const int degree = q.degree();
    cert.checks.degree_exponent = std::log(degree * eps2) / std::log(log1e);

    auto fail = [](const char* property, double measured, double limit) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "build_q: %s check failed (measured %.6g, limit %.6g)",
                      property, measured, limit);
        throw ConstructionFailed(msg);
    };

    // evenness and squareness over 1001 points spanning [-2L, 2L]; outside
    // the representable range the comparison moves to log space, which is
    // the same relative statement
    double even_dev = 0.0, scale = 1.0, sq_dev = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        const double x = -2.0 * L + 4.0 * L * i / 1000;
        const auto [sq, lq] = q.eval_log(x);
        const auto [sg, lg] = g.eval_log(x);
        (void)sg;
        if (lq < 650.0) {
            const double qx = q(x), qnx = q(-x), gx = g(x);
            even_dev = std::max(even_dev, std::abs(qx - qnx));
            scale = std::max(scale, std::abs(qx));
            sq_dev = std::max(sq_dev, std::abs(qx - gx * gx) / std::max(1.0, std::abs(qx)));
        } else {
            if (sq < 0) fail("squareness", -1.0, 0.0);
            const auto lq_neg = q.eval_log(-x).second;
            even_dev = std::max(even_dev, std::abs(lq - lq_neg));  // log-relative
            sq_dev = std::max(sq_dev, std::abs(lq - 2.0 * lg));
        }
    }
    // the stored pair must also agree coefficient by coefficient
    {
        const UnivariatePoly rebuilt = multiply_chebyshev(g, g);
        double cmax = 1.0, cdev = 0.0;
        for (double c : q.coeffs) cmax = std::max(cmax, std::abs(c));
        for (std::size_t i = 0; i < q.coeffs.size(); ++i) {
            cdev = std::max(cdev, std::abs(q.coeffs[i] - rebuilt.coeffs[i]) / cmax);
        }
        sq_dev = std::max(sq_dev, cdev);
    }
    cert.checks.evenness_deviation = even_dev / scale;
    cert.checks.squareness_deviation = sq_dev;
    if (cert.checks.evenness_deviation > 1e-10) fail("evenness", cert.checks.evenness_deviation, 1e-10);
    if (sq_dev > 1e-8) fail("squareness", sq_dev, 1e-8);

    // floor near the origin
    double qmin = q(0.0);
    for (int i = 0; i <= 512; ++i) {
        const double x = -eps + 2.0 * eps * i / 512;
        qmin = std::min(qmin, q(x));
    }
    cert.checks.min_near_zero = qmin;
    if (qmin < 1.0 - eps) fail("near-zero floor", qmin, 1.0 - eps);

    // band containment
    double band_max = 0.0, band_min = 0.0;
    for (int i = 0; i <= 4000; ++i) {
        const double x = -L + 2.0 * L * i / 4000;
        if (std::abs(x) < 2.0 * eps) continue;
        const double qx = q(x);
        band_max = std::max(band_max, qx);
        band_min = std::min(band_min, qx);
    }
    cert.checks.band_max = band_max;
    if (band_max > eps + 1e-12) fail("band containment", band_max, eps);
    if (band_min < -1e-12) fail("band containment", band_min, 0.0);

    // Gaussian mass
    cert.checks.gaussian_expectation = gauss_hermite_expectation(q, degree / 2 + 1);
    cert.checks.c_cert = cert.checks.gaussian_expectation / eps;
    if (!(cert.checks.c_cert <= 50.0)) fail("gaussian mass", cert.checks.c_cert, 50.0);

    return cert;
}

}  // namespace robustmix
