// separation.hpp -- the three-way separation classifier for Gaussian pairs
// and the mixture partitioner built on top of it.
//
// Two Gaussians with tiny overlap must be far apart in one of three ways:
// a separating direction for the means, a direction with a large variance
// ratio, or a large relative Frobenius distance between covariances.  All
// three statistics are functions of the generalized eigenvalue pencil
// (Sigma_P, Sigma_Q) and the mean difference, hence affine invariants.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "robustmix/distances.hpp"

namespace robustmix {

enum class SeparationCase { MeanSeparated, VarianceSeparated, CovarianceSeparated, NotSeparated };

inline const char* to_string(SeparationCase c) {
    switch (c) {
        case SeparationCase::MeanSeparated:       return "MeanSeparated";
        case SeparationCase::VarianceSeparated:   return "VarianceSeparated";
        case SeparationCase::CovarianceSeparated: return "CovarianceSeparated";
        case SeparationCase::NotSeparated:        return "NotSeparated";
    }
    return "?";
}

struct SeparationVerdict {
    SeparationCase sep_case = SeparationCase::NotSeparated;
    std::optional<Vector> witness_direction;  // unit vector, cases 1 and 2 only
    double witness_value = 0.0;               // the attained statistic
    double eps = 0.0;
    // all three statistics and their thresholds, for reporting
    double stat_mean = 0.0, thresh_mean = 0.0;
    double stat_variance = 0.0, thresh_variance = 0.0;
    double stat_covariance = 0.0, thresh_covariance = 0.0;
};

namespace detail {

// Eigenvalues of the pencil (Sigma_P, Sigma_Q), i.e. of Sigma_P^{-1} Sigma_Q,
// ascending, plus the generalized eigenvectors (columns, Sigma_P-orthonormal).
inline void pencil_eigs(const GaussianParams& p, const GaussianParams& q, Vector* lambda,
                        Matrix* vecs) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(q.covariance(), p.covariance());
    if (ges.info() != Eigen::Success) {
        throw SingularCovariance("pencil_eigs: generalized eigensolve failed");
    }
    *lambda = ges.eigenvalues();
    if (vecs) *vecs = ges.eigenvectors();
}

}  // namespace detail

// Classifier thresholds at corruption level eps:
//   case 1: (mu_P-mu_Q)' (Sigma_P+Sigma_Q)^{-1} (mu_P-mu_Q) >= (1/100) (log 1/eps)^{1/3}
//   case 2: max(lambda_max, 1/lambda_min) of the pencil    >= (log 1/eps)^{1/6}
//   case 3: sum_i (1-lambda_i)^2                           >= c3 log(1/eps)/loglog(1/eps)
// tested in order 1, 2, 3; the first that fires wins.
inline SeparationVerdict classify_separation(const GaussianParams& p, const GaussianParams& q,
                                             double eps, double c3 = 0.1) {
    if (p.dim() != q.dim()) throw DimensionMismatch("classify_separation: dimension mismatch");
    if (eps <= 0.0 || eps >= 1.0) throw InvalidEpsilon("classify_separation: need 0 < eps < 1");
    const double log_inv = std::log(1.0 / eps);
    if (std::log(log_inv) <= 0.0) {
        throw InvalidEpsilon("classify_separation: log log(1/eps) <= 0 (eps >= 1/e)");
    }

    SeparationVerdict v;
    v.eps = eps;
    v.thresh_mean = 0.01 * std::cbrt(log_inv);
    v.thresh_variance = std::pow(log_inv, 1.0 / 6.0);
    v.thresh_covariance = c3 * log_inv / std::log(log_inv);

    // Case 1 at its exact maximizer v* = (Sigma_P+Sigma_Q)^{-1} (mu_P-mu_Q).
    const Matrix sum_cov = p.covariance() + q.covariance();
    const Vector mu_diff = p.mean() - q.mean();
    Eigen::LLT<Matrix> llt(sum_cov);
    if (llt.info() != Eigen::Success) {
        throw SingularCovariance("classify_separation: Sigma_P + Sigma_Q not PD");
    }
    const Vector vstar = llt.solve(mu_diff);
    v.stat_mean = mu_diff.dot(vstar);

    Vector lambda;
    Matrix gvecs;
    detail::pencil_eigs(p, q, &lambda, &gvecs);
    const int d = p.dim();
    const double lam_min = lambda(0), lam_max = lambda(d - 1);
    if (lam_min <= 0.0) throw SingularCovariance("classify_separation: pencil not PD");
    v.stat_variance = std::max(lam_max, 1.0 / lam_min);
    v.stat_covariance = (1.0 - lambda.array()).square().sum();

    if (v.stat_mean >= v.thresh_mean && vstar.norm() > 0.0) {
        v.sep_case = SeparationCase::MeanSeparated;
        v.witness_direction = vstar.normalized();
        v.witness_value = v.stat_mean;
    } else if (v.stat_variance >= v.thresh_variance) {
        v.sep_case = SeparationCase::VarianceSeparated;
        const int col = lam_max >= 1.0 / lam_min ? d - 1 : 0;
        v.witness_direction = gvecs.col(col).normalized();
        v.witness_value = v.stat_variance;
    } else if (v.stat_covariance >= v.thresh_covariance) {
        v.sep_case = SeparationCase::CovarianceSeparated;
        v.witness_value = v.stat_covariance;
    }
    return v;
}

enum class PartitionCase { Hyperplane, HighLowVariance, AllCovarianceSeparated, NoPartitionFound };

inline const char* to_string(PartitionCase c) {
    switch (c) {
        case PartitionCase::Hyperplane:             return "Hyperplane";
        case PartitionCase::HighLowVariance:        return "HighLowVariance";
        case PartitionCase::AllCovarianceSeparated: return "AllCovarianceSeparated";
        case PartitionCase::NoPartitionFound:       return "NoPartitionFound";
    }
    return "?";
}

struct MixturePartition {
    std::vector<int> side_a, side_b;
    PartitionCase part_case = PartitionCase::NoPartitionFound;
    std::optional<Vector> direction;
    bool separation_warning = false;  // some pair's TV lower bound < 1 - eps
};

// Candidate-direction search for a certifiable two-sided split of the
// mixture.  D holds, for every component pair, the exact mean-separation
// maximizer and the extreme pencil eigenvectors, padded with random unit
// directions against degenerate ties.
inline MixturePartition partition_mixture(const MixtureModel& m, double eps, double C,
                                          double Cprime, double c3 = 0.1,
                                          std::uint64_t seed = 1234567) {
    const int k = m.k();
    const int d = m.dim();
    if (k < 2) throw PreconditionFailed("partition_mixture: k >= 2 required");

    MixturePartition out;
    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            if (tv_bracket(m.component(a), m.component(b)).first < 1.0 - eps) {
                out.separation_warning = true;
            }
        }
    }

    // full mixture covariance (law of total covariance)
    Vector mbar = Vector::Zero(d);
    for (int i = 0; i < k; ++i) mbar += m.weights()[i] * m.component(i).mean();
    Matrix sigma = Matrix::Zero(d, d);
    for (int i = 0; i < k; ++i) {
        const Vector dm = m.component(i).mean() - mbar;
        sigma += m.weights()[i] * (m.component(i).covariance() + dm * dm.transpose());
    }

    // candidate directions
    std::vector<Vector> dirs;
    for (int a = 0; a < k; ++a) {
        for (int b = a + 1; b < k; ++b) {
            const Matrix sum_cov = m.component(a).covariance() + m.component(b).covariance();
            const Vector mu_diff = m.component(a).mean() - m.component(b).mean();
            if (mu_diff.norm() > 0.0) {
                Eigen::LLT<Matrix> llt(sum_cov);
                if (llt.info() == Eigen::Success) {
                    Vector v = llt.solve(mu_diff);
                    if (v.norm() > 0.0) dirs.push_back(v.normalized());
                }
            }
            Vector lambda;
            Matrix gvecs;
            detail::pencil_eigs(m.component(a), m.component(b), &lambda, &gvecs);
            dirs.push_back(gvecs.col(0).normalized());
            dirs.push_back(gvecs.col(d - 1).normalized());
        }
    }
    Rng rng(seed);
    for (int r = 0; r < 64; ++r) {
        Vector v(d);
        for (int j = 0; j < d; ++j) v(j) = rng.normal();
        dirs.push_back(v.normalized());
    }

    // Case 1: a direction and threshold separating mean projections with
    // pairwise gaps large against both the local and the global variance.
    for (const Vector& v : dirs) {
        std::vector<std::pair<double, int>> proj(k);
        for (int i = 0; i < k; ++i) proj[i] = {m.component(i).mean().dot(v), i};
        std::sort(proj.begin(), proj.end());
        const double global_var = v.dot(sigma * v);
        for (int cut = 1; cut < k; ++cut) {
            bool ok = true;
            for (int ia = 0; ia < cut && ok; ++ia) {
                for (int ib = cut; ib < k && ok; ++ib) {
                    const int a = proj[ia].second, b = proj[ib].second;
                    const double gap = sq(proj[ib].first - proj[ia].first);
                    const double sa = v.dot(m.component(a).covariance() * v);
                    const double sb = v.dot(m.component(b).covariance() * v);
                    const double need =
                        std::max(std::pow(double(k), C) * (sa + sb), global_var / (k * k));
                    if (gap < need) ok = false;
                }
            }
            if (ok) {
                out.part_case = PartitionCase::Hyperplane;
                for (int ia = 0; ia < cut; ++ia) out.side_a.push_back(proj[ia].second);
                for (int ib = cut; ib < k; ++ib) out.side_b.push_back(proj[ib].second);
                std::sort(out.side_a.begin(), out.side_a.end());
                std::sort(out.side_b.begin(), out.side_b.end());
                out.direction = v;
                return out;
            }
        }
    }

    // Case 2: variance-ordering split; the i lowest-variance components sit
    // below a k^{-(C')^i} fraction of the mixture variance along v.
    for (const Vector& v : dirs) {
        std::vector<std::pair<double, int>> vars(k);
        for (int i = 0; i < k; ++i) vars[i] = {v.dot(m.component(i).covariance() * v), i};
        std::sort(vars.begin(), vars.end());
        const double global_var = v.dot(sigma * v);
        for (int cut = 1; cut < k; ++cut) {
            const double bound = std::pow(double(k), -std::pow(Cprime, cut)) * global_var;
            if (vars[cut - 1].first <= bound) {
                out.part_case = PartitionCase::HighLowVariance;
                for (int i = 0; i < cut; ++i) out.side_a.push_back(vars[i].second);
                for (int i = cut; i < k; ++i) out.side_b.push_back(vars[i].second);
                std::sort(out.side_a.begin(), out.side_a.end());
                std::sort(out.side_b.begin(), out.side_b.end());
                out.direction = v;
                return out;
            }
        }
    }

    // Case 3: every pair covariance-separated at the recursion-proof level.
    const double need3 = c3 * std::pow(double(k), std::pow(Cprime, double(k)) + C + 1.0);
    bool all3 = true;
    for (int a = 0; a < k && all3; ++a) {
        for (int b = a + 1; b < k && all3; ++b) {
            Vector lambda;
            detail::pencil_eigs(m.component(a), m.component(b), &lambda, nullptr);
            if ((1.0 - lambda.array()).square().sum() < need3) all3 = false;
        }
    }
    if (all3) {
        out.part_case = PartitionCase::AllCovarianceSeparated;
        return out;
    }
    out.part_case = PartitionCase::NoPartitionFound;
    return out;
}

}  // namespace robustmix
