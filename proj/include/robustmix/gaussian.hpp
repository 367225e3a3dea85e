// gaussian.hpp -- Gaussian / mixture parameter types, density evaluation and
// seeded sampling.
//
// Sampling contract (tested bit-for-bit): a point of N(mu, Sigma) is produced
// by drawing z_0..z_{d-1} from Rng::normal() in coordinate order and applying
// x = mu + L z with L the cached lower Cholesky factor, accumulated as
//   x_i = mu_i + sum_{j<=i} L(i,j) * z_j   (j ascending).
// Hence samples of N(mu, Sigma) at seed s equal the documented affine image
// of samples of N(0, I) at the same seed.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "robustmix/common.hpp"
#include "robustmix/linalg.hpp"
#include "robustmix/rng.hpp"

namespace robustmix {

class GaussianParams {
  public:
    GaussianParams(Vector mean, Matrix covariance)
        : mean_(std::move(mean)), cov_(std::move(covariance)) {
        if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size()) {
            throw DimensionMismatch("GaussianParams: mean/covariance shape mismatch");
        }
        if (!is_symmetric_rel(cov_, 1e-12)) {
            throw InvalidShape("GaussianParams: covariance not symmetric (rel tol 1e-12)");
        }
        cov_ = ((cov_ + cov_.transpose()) / 2.0).eval();  // kill roundoff skew
        chol_ = cholesky_with_ridge(cov_, &ridge_);
        if (ridge_ > 0.0) cov_.diagonal().array() += ridge_;
        log_det_ = log_det_from_cholesky(chol_);
    }

    int dim() const { return static_cast<int>(mean_.size()); }
    const Vector& mean() const { return mean_; }
    const Matrix& covariance() const { return cov_; }
    const Matrix& chol_lower() const { return chol_; }
    double ridge_applied() const { return ridge_; }
    double log_det_covariance() const { return log_det_; }

  private:
    Vector mean_;
    Matrix cov_;
    Matrix chol_;
    double ridge_ = 0.0;
    double log_det_ = 0.0;
};

inline double log_density(const GaussianParams& g, const Vector& x) {
    if (x.size() != g.mean().size()) {
        throw DimensionMismatch("log_density: point dimension != Gaussian dimension");
    }
    const Vector u = forward_solve(g.chol_lower(), x - g.mean());
    return -0.5 * (g.dim() * kLog2Pi + g.log_det_covariance() + u.squaredNorm());
}

class MixtureModel {
  public:
    MixtureModel(std::vector<GaussianParams> components, std::vector<double> weights)
        : components_(std::move(components)), weights_(std::move(weights)) {
        if (components_.empty()) throw InvalidShape("MixtureModel: k must be >= 1");
        if (weights_.size() != components_.size()) {
            throw InvalidWeights("MixtureModel: one weight per component required");
        }
        double total = 0.0;
        for (double w : weights_) {
            if (w < 0.0) throw InvalidWeights("MixtureModel: negative weight");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-10) {
            throw InvalidWeights("MixtureModel: weights must sum to 1 (tol 1e-10)");
        }
        for (const auto& c : components_) {
            if (c.dim() != components_[0].dim()) {
                throw DimensionMismatch("MixtureModel: components of unequal dimension");
            }
        }
    }

    // Uniform-weight convenience factory.
    static MixtureModel uniform(std::vector<GaussianParams> components) {
        const std::size_t k = components.size();
        if (k == 0) throw InvalidShape("MixtureModel: k must be >= 1");
        return MixtureModel(std::move(components),
                            std::vector<double>(k, 1.0 / static_cast<double>(k)));
    }

    int k() const { return static_cast<int>(components_.size()); }
    int dim() const { return components_[0].dim(); }
    const std::vector<GaussianParams>& components() const { return components_; }
    const GaussianParams& component(int i) const { return components_.at(i); }
    const std::vector<double>& weights() const { return weights_; }

  private:
    std::vector<GaussianParams> components_;
    std::vector<double> weights_;
};

struct SampleSet {
    Matrix points;                                     // n x d
    std::optional<std::vector<int>> labels;            // ground-truth component
    std::optional<std::vector<std::uint8_t>> corrupted;  // 1 = adversarial row
    std::uint64_t seed = 0;
    double declared_eps = 0.0;
    std::string adversary;

    int n() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }
};

// One sample of `g` drawn from `rng` per the header contract (d normals).
inline Vector sample_point(const GaussianParams& g, Rng& rng) {
    const int d = g.dim();
    Vector z(d);
    for (int j = 0; j < d; ++j) z(j) = rng.normal();
    const Matrix& L = g.chol_lower();
    Vector x(d);
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j <= i; ++j) acc += L(i, j) * z(j);
        x(i) = g.mean()(i) + acc;
    }
    return x;
}

// The deterministic affine map used by sampling, exposed so tests can verify
// equivariance at the bit level.
inline Vector affine_from_standard(const GaussianParams& g, const Vector& z) {
    const Matrix& L = g.chol_lower();
    const int d = g.dim();
    Vector x(d);
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j <= i; ++j) acc += L(i, j) * z(j);
        x(i) = g.mean()(i) + acc;
    }
    return x;
}

inline Matrix sample_gaussian(const GaussianParams& g, int n, std::uint64_t seed) {
    Rng rng(seed);
    Matrix pts(n, g.dim());
    for (int i = 0; i < n; ++i) pts.row(i) = sample_point(g, rng).transpose();
    return pts;
}

enum class SamplingMode { Stratified, Iid };

// Stratified mode draws exactly n * weight_i points from component i (those
// counts must be integral); iid mode draws the component index per point.
// Labels are always populated.  One Rng seeded with `seed` serves the whole
// set, components in index order, so output is a pure function of arguments.
inline SampleSet sample_mixture(const MixtureModel& m, int n, std::uint64_t seed,
                                SamplingMode mode = SamplingMode::Stratified) {
    if (n < m.k()) throw InvalidSampleCount("sample_mixture: n < k");
    SampleSet out;
    out.points.resize(n, m.dim());
    out.labels = std::vector<int>(n, 0);
    out.seed = seed;
    Rng rng(seed);

    if (mode == SamplingMode::Stratified) {
        std::vector<int> counts(m.k());
        int total = 0;
        for (int i = 0; i < m.k(); ++i) {
            const double exact = m.weights()[i] * static_cast<double>(n);
            counts[i] = static_cast<int>(std::lround(exact));
            if (std::abs(exact - counts[i]) > 1e-9) {
                throw InvalidSampleCount(
                    "sample_mixture: stratified mode needs integral n*weight_i");
            }
            total += counts[i];
        }
        if (total != n) {
            throw InvalidSampleCount("sample_mixture: stratified counts do not add to n");
        }
        int row = 0;
        for (int i = 0; i < m.k(); ++i) {
            for (int c = 0; c < counts[i]; ++c, ++row) {
                out.points.row(row) = sample_point(m.component(i), rng).transpose();
                (*out.labels)[row] = i;
            }
        }
    } else {
        std::vector<double> cdf(m.k());
        double acc = 0.0;
        for (int i = 0; i < m.k(); ++i) {
            acc += m.weights()[i];
            cdf[i] = acc;
        }
        for (int row = 0; row < n; ++row) {
            const double u = rng.uniform();
            int comp = 0;
            while (comp + 1 < m.k() && u >= cdf[comp]) ++comp;
            out.points.row(row) = sample_point(m.component(comp), rng).transpose();
            (*out.labels)[row] = comp;
        }
    }
    return out;
}

}  // namespace robustmix
