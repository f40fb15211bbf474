#include "dlb/linalg.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "dlb/errors.hpp"

namespace dlb {

namespace {

constexpr double kSymmetryTolerance = 1e-10;
constexpr double kResidualTolerance = 1e-8;
constexpr double kJitterCapFraction = 1e-4;
constexpr double kDefaultJitterFraction = 1e-10;

double mean_diagonal(const Matrix& a) {
    return a.rows() == 0 ? 0.0 : a.diagonal().mean();
}

void check_square_symmetric(const Matrix& a) {
    if (a.rows() != a.cols())
        throw DimensionMismatch("spd_solve: matrix is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
    if (!a.allFinite()) throw InvalidArgument("spd_solve: matrix has non-finite entries");
    if (symmetry_defect(a) > kSymmetryTolerance) throw NonSymmetric("spd_solve: matrix is not symmetric");
}

Matrix refine(const Matrix& a, double jitter, const Eigen::LLT<Matrix>& llt, const Matrix& b) {
    Matrix x = llt.solve(b);
    Matrix r = b - a * x - jitter * x;
    x += llt.solve(r);
    return x;
}

// Walks the jitter ladder. `probe` decides whether a successful factorization is accurate
// enough; an empty probe only requires the Cholesky to succeed.
template <typename Probe>
SpdFactorization factorize_with(const Matrix& a, double base_jitter, Probe&& probe) {
    check_square_symmetric(a);
    if (base_jitter < 0.0 || !std::isfinite(base_jitter)) throw InvalidArgument("spd_solve: base_jitter must be >= 0");
    const double diag = mean_diagonal(a);
    const double cap = kJitterCapFraction * std::abs(diag);
    double jitter = base_jitter;
    const Eigen::Index n = a.rows();
    for (;;) {
        Matrix shifted = a;
        shifted.diagonal().array() += jitter;
        SpdFactorization f{Eigen::LLT<Matrix>(shifted), jitter};
        if (f.llt.info() == Eigen::Success && probe(f)) return f;
        if (jitter >= cap) break;
        jitter = jitter == 0.0 ? kDefaultJitterFraction * std::abs(diag) : jitter * 10.0;
        if (jitter == 0.0) break;
        jitter = std::min(jitter, cap);
    }
    throw SingularSystem("spd_solve: no factorization of the " + std::to_string(n) + "x" + std::to_string(n) +
                         " system up to jitter " + std::to_string(cap));
}

}  // namespace

Matrix SpdFactorization::solve(const Matrix& a, const Matrix& b) const {
    return refine(a, jitter_used, llt, b);
}

double default_base_jitter(const Matrix& a) {
    return kDefaultJitterFraction * std::abs(mean_diagonal(a));
}

double relative_residual(const Matrix& a, double jitter, const Vector& x, const Vector& b) {
    const Vector r = a * x + jitter * x - b;
    const double bn = b.norm();
    return bn > 0.0 ? r.norm() / bn : r.norm();
}

SpdFactorization spd_factorize(const Matrix& a, double base_jitter) {
    // Probe with a ones vector so the accuracy contract applies to factorizations reused later.
    const Vector ones = Vector::Ones(a.rows());
    return factorize_with(a, base_jitter, [&](const SpdFactorization& f) {
        const Vector x = f.solve(a, ones);
        return x.allFinite() && relative_residual(a, f.jitter_used, x, ones) <= kResidualTolerance;
    });
}

SpdSolution spd_solve(const Matrix& a, const Vector& b, double base_jitter) {
    if (b.size() != a.rows())
        throw DimensionMismatch("spd_solve: rhs has " + std::to_string(b.size()) + " entries, matrix has " +
                                std::to_string(a.rows()) + " rows");
    if (!b.allFinite()) throw InvalidArgument("spd_solve: rhs has non-finite entries");
    std::optional<Vector> solution;
    const SpdFactorization f = factorize_with(a, base_jitter, [&](const SpdFactorization& f) {
        Vector x = f.solve(a, b);
        if (!x.allFinite() || relative_residual(a, f.jitter_used, x, b) > kResidualTolerance) return false;
        solution = std::move(x);
        return true;
    });
    return {std::move(*solution), f.jitter_used};
}

double min_eigenvalue_estimate(const Matrix& a, int iterations) {
    const Eigen::Index n = a.rows();
    if (n == 0) return 0.0;
    if (n == 1) return a(0, 0);
    auto power = [&](const Matrix& m) {
        Vector v = Vector::LinSpaced(n, 1.0, 2.0).normalized();
        double lambda = 0.0;
        for (int it = 0; it < iterations; ++it) {
            Vector w = m * v;
            const double norm = w.norm();
            if (norm == 0.0) return 0.0;
            lambda = v.dot(w);
            v = w / norm;
        }
        return lambda;
    };
    // Gershgorin bound keeps upper I - A positive semidefinite, so its dominant
    // eigenvalue is upper - lambda_min.
    const double upper = a.cwiseAbs().rowwise().sum().maxCoeff();
    Matrix shifted = -a;
    shifted.diagonal().array() += upper;
    return upper - power(shifted);
}

}  // namespace dlb
