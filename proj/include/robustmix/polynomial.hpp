// polynomial.hpp -- univariate polynomials in monomial or Chebyshev basis,
// Chebyshev fitting, series products, and Gauss-Hermite quadrature.
//
// Certificate-grade evaluations all run through the Chebyshev basis with the
// Clenshaw recurrence.  Far outside the defining interval Clenshaw overflows
// for large degree, so eval_log tracks an explicit scale factor and returns
// (sign, log|p|) instead.

#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "robustmix/common.hpp"

namespace robustmix {

enum class PolyBasis { Monomial, Chebyshev };

struct UnivariatePoly {
    PolyBasis basis = PolyBasis::Monomial;
    double lo = -1.0, hi = 1.0;  // Chebyshev interval; unused for monomials
    std::vector<double> coeffs;  // index = basis degree

    int degree() const { return static_cast<int>(coeffs.size()) - 1; }

    // Drop trailing coefficients below 1e-14 of the largest magnitude.
    void trim() {
        double scale = 0.0;
        for (double c : coeffs) scale = std::max(scale, std::abs(c));
        const double tol = 1e-14 * std::max(1.0, scale);
        while (coeffs.size() > 1 && std::abs(coeffs.back()) <= tol) coeffs.pop_back();
    }

    // (lo + hi) grouped so symmetric intervals map -x to exactly -xi
    double map_to_unit(double x) const { return (2.0 * x - (lo + hi)) / (hi - lo); }

    double operator()(double x) const {
        if (coeffs.empty()) return 0.0;
        if (basis == PolyBasis::Monomial) {
            double acc = 0.0;
            for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * x + coeffs[i];
            return acc;
        }
        // Clenshaw
        const double xi = map_to_unit(x);
        double b1 = 0.0, b2 = 0.0;
        for (std::size_t i = coeffs.size(); i-- > 1;) {
            const double b = coeffs[i] + 2.0 * xi * b1 - b2;
            b2 = b1;
            b1 = b;
        }
        return coeffs[0] + xi * b1 - b2;
    }

    // (sign, log|p(x)|), safe far outside [lo, hi] at any degree.  The
    // Clenshaw registers are renormalized whenever they grow past 1e250 and
    // later coefficient injections are scaled to match.
    std::pair<double, double> eval_log(double x) const {
        if (basis == PolyBasis::Monomial) {
            const double v = (*this)(x);
            return {v >= 0 ? 1.0 : -1.0, std::log(std::abs(v))};
        }
        const double xi = map_to_unit(x);
        double b1 = 0.0, b2 = 0.0;
        double log_scale = 0.0;   // true value = register * exp(log_scale)
        double inv_scale = 1.0;   // exp(-log_scale), underflows harmlessly
        for (std::size_t i = coeffs.size(); i-- > 1;) {
            const double b = coeffs[i] * inv_scale + 2.0 * xi * b1 - b2;
            b2 = b1;
            b1 = b;
            const double mag = std::max(std::abs(b1), std::abs(b2));
            if (mag > 1e250) {
                b1 *= 1e-250;
                b2 *= 1e-250;
                log_scale += std::log(1e250);
                inv_scale = std::exp(-log_scale);
            }
        }
        const double res = coeffs[0] * inv_scale + xi * b1 - b2;
        return {res >= 0 ? 1.0 : -1.0, std::log(std::abs(res)) + log_scale};
    }
};

// Fit a Chebyshev expansion of `degree` on [lo, hi] by sampling f at
// Chebyshev-Lobatto points and taking the (type-I) discrete cosine
// transform.  With sample_points == degree the fit interpolates, which is
// exact when f is itself a polynomial of degree <= sample_points; larger
// sample counts give the near-best truncated projection.
inline UnivariatePoly chebyshev_fit(const std::function<double(double)>& f, int degree,
                                    double lo, double hi, int sample_points = 0) {
    if (degree < 0) throw InvalidDegree("chebyshev_fit: negative degree");
    const int M = sample_points > 0 ? sample_points : std::max(2 * (degree + 1), 64);
    std::vector<double> fx(M + 1);
    for (int j = 0; j <= M; ++j) {
        const double xi = std::cos(kPi * j / M);
        fx[j] = f(0.5 * (lo + hi) + 0.5 * (hi - lo) * xi);
    }
    UnivariatePoly p;
    p.basis = PolyBasis::Chebyshev;
    p.lo = lo;
    p.hi = hi;
    p.coeffs.assign(degree + 1, 0.0);
    for (int k = 0; k <= degree; ++k) {
        double acc = 0.5 * (fx[0] + (k % 2 == 0 ? fx[M] : -fx[M]));
        for (int j = 1; j < M; ++j) acc += fx[j] * std::cos(kPi * j * k / M);
        p.coeffs[k] = (k == 0 ? 1.0 : 2.0) * acc / M;
    }
    return p;
}

// Product of two Chebyshev series on the same interval, via
// T_i T_j = (T_{i+j} + T_{|i-j|}) / 2.
inline UnivariatePoly multiply_chebyshev(const UnivariatePoly& a, const UnivariatePoly& b) {
    if (a.basis != PolyBasis::Chebyshev || b.basis != PolyBasis::Chebyshev ||
        a.lo != b.lo || a.hi != b.hi) {
        throw PreconditionFailed("multiply_chebyshev: mismatched bases/intervals");
    }
    UnivariatePoly out;
    out.basis = PolyBasis::Chebyshev;
    out.lo = a.lo;
    out.hi = a.hi;
    if (a.coeffs.empty() || b.coeffs.empty()) {
        out.coeffs = {0.0};
        return out;
    }
    out.coeffs.assign(a.coeffs.size() + b.coeffs.size() - 1, 0.0);
    for (std::size_t i = 0; i < a.coeffs.size(); ++i) {
        for (std::size_t j = 0; j < b.coeffs.size(); ++j) {
            const double half = 0.5 * a.coeffs[i] * b.coeffs[j];
            out.coeffs[i + j] += half;
            out.coeffs[i >= j ? i - j : j - i] += half;
        }
    }
    return out;
}

// Chebyshev -> monomial conversion (x in the original coordinates) by the
// T recurrence plus affine substitution; numerically trustworthy only up to
// degree ~30, which is all the round-trip contract asks of it.
inline UnivariatePoly chebyshev_to_monomial(const UnivariatePoly& p) {
    if (p.basis != PolyBasis::Chebyshev) return p;
    const int n = p.degree();
    // T_k as monomial coefficients in xi
    std::vector<std::vector<double>> T(n + 1);
    T[0] = {1.0};
    if (n >= 1) T[1] = {0.0, 1.0};
    for (int k = 2; k <= n; ++k) {
        T[k].assign(k + 1, 0.0);
        for (int i = 0; i <= k - 1; ++i) T[k][i + 1] += 2.0 * T[k - 1][i];
        for (int i = 0; i <= k - 2; ++i) T[k][i] -= T[k - 2][i];
    }
    std::vector<double> in_xi(n + 1, 0.0);
    for (int k = 0; k <= n; ++k) {
        for (int i = 0; i <= k; ++i) in_xi[i] += p.coeffs[k] * T[k][i];
    }
    // substitute xi = alpha x + beta
    const double alpha = 2.0 / (p.hi - p.lo);
    const double beta = -(p.lo + p.hi) / (p.hi - p.lo);
    std::vector<double> out(n + 1, 0.0);
    // Horner in polynomial space: out = in_xi[n]; out = out*(alpha x+beta) + c
    out[0] = in_xi[n];
    int cur_deg = 0;
    for (int k = n - 1; k >= 0; --k) {
        std::vector<double> next(cur_deg + 2, 0.0);
        for (int i = 0; i <= cur_deg; ++i) {
            next[i + 1] += out[i] * alpha;
            next[i] += out[i] * beta;
        }
        next[0] += in_xi[k];
        ++cur_deg;
        for (int i = 0; i <= cur_deg; ++i) out[i] = next[i];
    }
    UnivariatePoly q;
    q.basis = PolyBasis::Monomial;
    q.coeffs = std::move(out);
    return q;
}

inline UnivariatePoly monomial_to_chebyshev(const UnivariatePoly& p, double lo, double hi) {
    if (p.basis != PolyBasis::Monomial) {
        throw PreconditionFailed("monomial_to_chebyshev: expected monomial input");
    }
    return chebyshev_fit([&](double x) { return p(x); }, p.degree(), lo, hi,
                         std::max(64, 4 * (p.degree() + 1)));
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature for the standard normal weight (probabilists'
// convention): sum_i w_i f(x_i) = E_{x~N(0,1)} f(x) exactly for polynomials
// of degree <= 2n-1.

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

namespace detail {

// Evaluate orthonormal Hermite p~_0..p~_n at x with register rescaling.
// Returns log-scale S, final registers f_n, f_{n-1} (true p~ = f * e^S), and
// the Christoffel sum  sum_{j<n} p~_j(x)^2  as (acc, same scale S for acc*e^{2S}).
struct HermiteEval {
    double f_n, f_nm1, log_scale, christoffel_acc;
};

inline HermiteEval hermite_ortho_eval(int n, double x) {
    double fj = 1.0, fjm1 = 0.0;  // p~_0 = 1
    double S = 0.0, acc = 0.0;
    for (int j = 0; j < n; ++j) {
        acc += fj * fj;  // contributes p~_j^2 at scale 2S
        const double fnext = (x * fj - std::sqrt(double(j)) * fjm1) / std::sqrt(double(j + 1));
        fjm1 = fj;
        fj = fnext;
        const double mag = std::max(std::abs(fj), std::abs(fjm1));
        if (mag > 1e130) {
            fj *= 1e-130;
            fjm1 *= 1e-130;
            acc *= 1e-260;
            S += std::log(1e130);
        }
    }
    return {fj, fjm1, S, acc};
}

}  // namespace detail

inline QuadratureRule gauss_hermite_rule(int n) {
    if (n < 1) throw InvalidDegree("gauss_hermite_rule: n >= 1");
    QuadratureRule rule;
    rule.nodes.assign(n, 0.0);
    rule.weights.assign(n, 0.0);

    // Golub-Welsch: the nodes are the eigenvalues of the Jacobi matrix
    // (zero diagonal, subdiagonal sqrt(k)).  Eigenvalues-only tridiagonal QL
    // is O(n^2) and has no basin-of-attraction failure modes; a short Newton
    // polish then brings each node to full precision.
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(std::max(n - 1, 0));
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(double(k));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw ConstructionFailed("gauss_hermite_rule: tridiagonal eigensolve failed");
    }

    const int half = (n + 1) / 2;
    for (int i = 0; i < half; ++i) {
        const int idx_hi = n - 1 - i;
        double x = 0.5 * (es.eigenvalues()[idx_hi] - es.eigenvalues()[i]);
        if (2 * i == n - 1) {
            x = 0.0;  // middle node of an odd rule is exactly zero
        } else {
            for (int iter = 0; iter < 4; ++iter) {
                const auto ev = detail::hermite_ortho_eval(n, x);
                // d/dx p~_n = sqrt(n) p~_{n-1}
                const double deriv = std::sqrt(double(n)) * ev.f_nm1;
                if (deriv == 0.0) break;
                const double dx = ev.f_n / deriv;
                x -= dx;
                if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
            }
        }
        const auto ev = detail::hermite_ortho_eval(n, x);
        const double w = std::exp(-(std::log(ev.christoffel_acc) + 2.0 * ev.log_scale));
        rule.nodes[idx_hi] = x;
        rule.nodes[i] = -x;
        rule.weights[idx_hi] = w;
        rule.weights[i] = w;
    }
    for (int i = 1; i < n; ++i) {
        if (!(rule.nodes[i] > rule.nodes[i - 1])) {
            throw ConstructionFailed("gauss_hermite_rule: node ordering failure");
        }
    }
    return rule;
}

// E_{x~N(0,1)} p(x) by Gauss-Hermite with enough nodes for exactness.  If
// `nodes` is too small for the degree it is bumped automatically and
// *node_warning set.
inline double gauss_hermite_expectation(const UnivariatePoly& p, int nodes,
                                        bool* node_warning = nullptr) {
    const int needed = p.degree() / 2 + 1;
    if (nodes < needed) {
        if (node_warning) *node_warning = true;
        nodes = needed;
    } else if (node_warning) {
        *node_warning = false;
    }
    const QuadratureRule rule = gauss_hermite_rule(nodes);
    std::vector<double> terms(nodes);
    for (int i = 0; i < nodes; ++i) terms[i] = rule.weights[i] * p(rule.nodes[i]);
    return pairwise_sum(terms);
}

}  // namespace robustmix
