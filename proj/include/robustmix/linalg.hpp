// linalg.hpp -- shared dense linear algebra helpers on top of Eigen.

#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "robustmix/common.hpp"

namespace robustmix {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline bool is_symmetric_rel(const Matrix& a, double rel_tol) {
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Default ridge magnitude used whenever a covariance refuses to factor.
inline double default_ridge(const Matrix& cov) {
    const double d = static_cast<double>(cov.rows());
    return 1e-10 * cov.trace() / std::max(1.0, d);
}

// Lower Cholesky factor with a single ridge retry (cov + lambda*I).  Throws
// SingularCovariance if the ridged matrix still fails.  `ridge_used` reports
// the lambda actually applied (0 when the plain factorization succeeded).
inline Matrix cholesky_with_ridge(const Matrix& cov, double* ridge_used = nullptr) {
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success) {
        if (ridge_used) *ridge_used = 0.0;
        return llt.matrixL();
    }
    const double lambda = std::max(default_ridge(cov), 1e-300);
    Matrix ridged = cov;
    ridged.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt2(ridged);
    if (llt2.info() != Eigen::Success) {
        throw SingularCovariance("covariance not positive definite even after ridge");
    }
    if (ridge_used) *ridge_used = lambda;
    return llt2.matrixL();
}

// log det(cov) from its lower Cholesky factor; avoids overflow for d ~ 100.
inline double log_det_from_cholesky(const Matrix& chol_lower) {
    return 2.0 * chol_lower.diagonal().array().log().sum();
}

// Symmetric positive (semi)definite square root and inverse square root via
// eigendecomposition.  Eigenvalues below eig_floor are clamped before the
// inverse, so callers should ridge first if they need a hard failure instead.
inline Matrix symmetric_sqrt(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    Vector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

inline Matrix symmetric_inv_sqrt(const Matrix& a, double eig_floor = 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(a);
    const Vector& lam = es.eigenvalues();
    if (lam(0) <= 0.0 && eig_floor <= 0.0) {
        throw SingularCovariance("symmetric_inv_sqrt: nonpositive eigenvalue");
    }
    Vector inv = (eig_floor > 0.0 ? lam.cwiseMax(eig_floor) : lam).cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// x -> L^{-1} x for lower-triangular L (forward substitution).
inline Vector forward_solve(const Matrix& chol_lower, const Vector& x) {
    return chol_lower.triangularView<Eigen::Lower>().solve(x);
}

}  // namespace robustmix
