#pragma once

#include <Eigen/Dense>

namespace dlb {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Cholesky factorization of A + jitter * I, with the jitter that made it succeed.
struct SpdFactorization {
    Eigen::LLT<Matrix> llt;
    double jitter_used = 0.0;

    /// Solves (A + jitter I) X = B with one step of iterative refinement against `a`.
    Matrix solve(const Matrix& a, const Matrix& b) const;
};

struct SpdSolution {
    Vector x;
    double jitter_used = 0.0;
};

/// Default starting jitter: 1e-10 times the mean diagonal.
double default_base_jitter(const Matrix& a);

/// Factors A + jitter I, escalating jitter x10 from `base_jitter` until the factorization
/// succeeds and reproduces a probe right-hand side to 1e-8 relative residual. The cap is
/// 1e-4 times the mean diagonal.
///
/// Throws NonSymmetric when A is not symmetric to 1e-10 relative, SingularSystem when the
/// cap is reached, DimensionMismatch when A is not square.
SpdFactorization spd_factorize(const Matrix& a, double base_jitter);

/// Solves (A + jitter I) x = b; see spd_factorize for the jitter policy.
SpdSolution spd_solve(const Matrix& a, const Vector& b, double base_jitter);

/// ||(A + jitter I) x - b|| / ||b||  (or the absolute residual when b = 0).
double relative_residual(const Matrix& a, double jitter, const Vector& x, const Vector& b);

/// Smallest eigenvalue of a symmetric matrix estimated with two power iterations
/// (largest eigenvalue, then the largest of lambda_max I - A). Used as a PSD check.
double min_eigenvalue_estimate(const Matrix& a, int iterations = 2000);

/// Relative symmetry defect max|A - A^T| / max|A|.
template <typename Derived>
double symmetry_defect(const Eigen::MatrixBase<Derived>& a) {
    const double scale = a.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (a - a.transpose()).cwiseAbs().maxCoeff() / scale;
}

}  // namespace dlb
