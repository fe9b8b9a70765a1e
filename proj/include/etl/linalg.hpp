#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "etl/errors.hpp"

namespace etl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Absolute eigenvalue tolerance for positive semi-definiteness checks.
inline constexpr double kPsdTolerance = 1e-12;

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

inline double spectral_radius(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return m.eigenvalues().cwiseAbs().maxCoeff();
}

inline std::string shape_of(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

/// Smallest eigenvalue of the symmetric part of `m`.
inline double min_symmetric_eigenvalue(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline bool is_psd(const Matrix& m, double tol = kPsdTolerance) {
    return m.rows() == m.cols() && min_symmetric_eigenvalue(m) >= -tol;
}

/**
 * @brief Symmetric PSD square root via eigendecomposition.
 *
 * Negative eigenvalues down to -tol are clipped to zero, which keeps
 * rank-deficient covariances (e.g. from residual estimates) usable.
 * Throws NumericalError for anything more negative than that.
 */
inline Matrix psd_sqrt(const Matrix& m, double tol = kPsdTolerance) {
    if (m.rows() != m.cols()) throw ConfigError("psd_sqrt: matrix must be square, got " + shape_of(m));
    Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(m));
    Vector ev = es.eigenvalues();
    if (ev.size() > 0 && ev.minCoeff() < -tol) {
        std::ostringstream os;
        os << "matrix is not positive semi-definite (min eigenvalue " << ev.minCoeff() << ")";
        throw NumericalError(os.str());
    }
    ev = ev.cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace etl
