// distances.hpp -- Hellinger, TV brackets and Monte Carlo TV for Gaussian
// pairs.
//
// H^2(P,Q) has a closed form for Gaussians; TV does not, but
// H^2 <= TV <= sqrt(H^2 (2 - H^2)) brackets it, and a two-sided Monte Carlo
// estimator serves as the oracle in between.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "robustmix/gaussian.hpp"

namespace robustmix {

// Squared Hellinger distance.  Computed in log-determinant space so large
// dimension / tiny determinants do not overflow, and in a form symmetric in
// (p, q) down to the last bit.
inline double hellinger_sq(const GaussianParams& p, const GaussianParams& q) {
    if (p.dim() != q.dim()) throw DimensionMismatch("hellinger_sq: dimension mismatch");
    const Matrix mid = (p.covariance() + q.covariance()) / 2.0;
    Eigen::LLT<Matrix> llt(mid);
    if (llt.info() != Eigen::Success) {
        throw SingularCovariance("hellinger_sq: midpoint covariance not PD");
    }
    const Matrix L = llt.matrixL();
    const double log_det_mid = log_det_from_cholesky(L);
    const Vector u = forward_solve(L, p.mean() - q.mean());
    const double log_bc = 0.25 * p.log_det_covariance() + 0.25 * q.log_det_covariance() -
                          0.5 * log_det_mid - 0.125 * u.squaredNorm();
    const double h2 = 1.0 - std::exp(log_bc);
    return std::clamp(h2, 0.0, 1.0);
}

// [H^2, sqrt(H^2 (2 - H^2))]; the interval always contains TV(p, q).
inline std::pair<double, double> tv_bracket(const GaussianParams& p,
                                            const GaussianParams& q) {
    const double h2 = hellinger_sq(p, q);
    return {h2, std::sqrt(h2 * (2.0 - h2))};
}

struct TvEstimate {
    double value = 0.0;
    double standard_error = 0.0;
};

// Two-sided Monte Carlo TV: TV = 1/2 E_p (1 - q/p)_+ + 1/2 E_q (1 - p/q)_+.
// Half the budget is spent on each side; the reported standard error
// combines both sample variances.
inline TvEstimate tv_monte_carlo(const GaussianParams& p, const GaussianParams& q,
                                 int samples, std::uint64_t seed) {
    if (samples < 1) throw PreconditionFailed("tv_monte_carlo: samples >= 1 required");
    const int np = samples / 2 + samples % 2;
    const int nq = samples / 2 > 0 ? samples / 2 : 1;
    Rng rng(seed);

    auto one_side = [&](const GaussianParams& from, const GaussianParams& other, int n,
                        double* var_out) {
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            const Vector x = sample_point(from, rng);
            const double t = 1.0 - std::exp(log_density(other, x) - log_density(from, x));
            const double v = t > 0.0 ? t : 0.0;
            sum += v;
            sumsq += v * v;
        }
        const double mean = sum / n;
        *var_out = n > 1 ? (sumsq / n - mean * mean) / (n - 1) : 0.0;
        return mean;
    };

    double var_p = 0.0, var_q = 0.0;
    const double mp = one_side(p, q, np, &var_p);
    const double mq = one_side(q, p, nq, &var_q);
    TvEstimate est;
    est.value = 0.5 * mp + 0.5 * mq;
    est.standard_error = std::sqrt(0.25 * var_p + 0.25 * var_q);
    return est;
}

// Negative log-overlap h = -log(1 - TV), capped when the Monte Carlo overlap
// estimate dips below machine resolution.
inline double overlap_h(const GaussianParams& p, const GaussianParams& q, int samples,
                        std::uint64_t seed, double h_max = 40.0) {
    const double tv = tv_monte_carlo(p, q, samples, seed).value;
    const double overlap = 1.0 - tv;
    if (overlap <= std::exp(-h_max)) return h_max;
    return -std::log(overlap);
}

}  // namespace robustmix
