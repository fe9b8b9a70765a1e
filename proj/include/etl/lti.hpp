#pragma once

#include <cmath>
#include <numbers>
#include <sstream>
#include <variant>

#include "etl/linalg.hpp"
#include "etl/random.hpp"

namespace etl {

/**
 * @brief Discrete-time linear Gaussian plant under static state feedback.
 *
 *   x(k+1) = (A + B F) x(k) + B r(k) + eps(k),   eps(k) ~ N(0, Sigma)
 *
 * The open-loop A may be unstable; the closed loop A + B F must have spectral
 * radius below one. Immutable after construction.
 */
class LinearSystem {
public:
    LinearSystem(Matrix A, Matrix B, Matrix Sigma, Matrix F, double Ts)
        : A_(std::move(A)), B_(std::move(B)), Sigma_(std::move(Sigma)), F_(std::move(F)), Ts_(Ts) {
        const auto n = A_.rows();
        if (n == 0 || A_.cols() != n) throw ConfigError("A must be square and non-empty, got " + shape_of(A_));
        if (B_.rows() != n || B_.cols() == 0) throw ConfigError("B must be n x q, got " + shape_of(B_));
        if (Sigma_.rows() != n || Sigma_.cols() != n)
            throw ConfigError("Sigma must be n x n, got " + shape_of(Sigma_));
        if (F_.rows() != B_.cols() || F_.cols() != n) throw ConfigError("F must be q x n, got " + shape_of(F_));
        if (!(Ts_ > 0.0) || !std::isfinite(Ts_)) throw ConfigError("sample time must be positive");
        if (!A_.allFinite() || !B_.allFinite() || !Sigma_.allFinite() || !F_.allFinite())
            throw ConfigError("system matrices must be finite");
        if (!is_psd(Sigma_)) throw ConfigError("Sigma must be symmetric positive semi-definite");
        Sigma_ = symmetrize(Sigma_);
        A_cl_ = A_ + B_ * F_;
        const double rho = spectral_radius(A_cl_);
        if (!(rho < 1.0)) {
            std::ostringstream os;
            os << "closed loop A + B F is not stable (spectral radius " << rho << ")";
            throw ConfigError(os.str());
        }
    }

    /// Same plant with a replaced open-loop A (feedback, input gain and noise kept).
    [[nodiscard]] LinearSystem with_A(Matrix A) const { return {std::move(A), B_, Sigma_, F_, Ts_}; }
    [[nodiscard]] LinearSystem with_Sigma(Matrix Sigma) const { return {A_, B_, std::move(Sigma), F_, Ts_}; }

    const Matrix& A() const { return A_; }
    const Matrix& B() const { return B_; }
    const Matrix& Sigma() const { return Sigma_; }
    const Matrix& F() const { return F_; }
    const Matrix& closed_loop() const { return A_cl_; }
    double Ts() const { return Ts_; }
    Eigen::Index n() const { return A_.rows(); }
    Eigen::Index q() const { return B_.cols(); }

private:
    Matrix A_, B_, Sigma_, F_, A_cl_;
    double Ts_;
};

inline Matrix make_closed_loop(const LinearSystem& sys) { return sys.A() + sys.B() * sys.F(); }

/// One step of the closed loop; the caller supplies the noise draw.
inline Vector step(const LinearSystem& sys, const Vector& x, const Vector& r, const Vector& noise) {
    return sys.closed_loop() * x + sys.B() * r + noise;
}

/**
 * @brief Zero-mean Gaussian sampler with a fixed covariance.
 *
 * Factorizes once (symmetric eigendecomposition, clipped at zero), then each
 * draw is L * w with w standard normal.
 */
class GaussianNoise {
public:
    explicit GaussianNoise(const Matrix& Sigma) : factor_(psd_sqrt(Sigma)) {}

    Vector operator()(RngStream& rng) const { return factor_ * rng.normal_vector(factor_.cols()); }

    const Matrix& factor() const { return factor_; }
    Eigen::Index dim() const { return factor_.rows(); }

private:
    Matrix factor_;
};

inline Vector sample_noise(const Matrix& Sigma, RngStream& rng) { return GaussianNoise(Sigma)(rng); }

// Reference signals -----------------------------------------------------------

struct ZeroReference {};

struct CosineReference {
    double amplitude = 1.0;
    double omega = 1.0; ///< rad/s
};

/// Linear-sweep chirp from f0 to f1 Hz over `duration` seconds, held at f1 afterwards.
struct ChirpReference {
    double amplitude = 1.0;
    double f0 = 0.1;
    double f1 = 1.0;
    double duration = 1.0;
};

using ReferenceSignal = std::variant<ZeroReference, CosineReference, ChirpReference>;

inline void validate(const ChirpReference& c) {
    if (!(c.f0 > 0.0) || !(c.f1 > c.f0)) throw ConfigError("chirp requires 0 < f0 < f1");
    if (!(c.duration > 0.0)) throw ConfigError("chirp duration must be positive");
}

/// Instantaneous frequency in Hz at time t.
inline double chirp_frequency(const ChirpReference& c, double t) {
    if (t >= c.duration) return c.f1;
    return c.f0 + (c.f1 - c.f0) * std::max(t, 0.0) / c.duration;
}

/// Phase in cycles, the integral of chirp_frequency from 0 to t.
inline double chirp_phase(const ChirpReference& c, double t) {
    const double sweep_end = c.f0 * c.duration + 0.5 * (c.f1 - c.f0) * c.duration;
    if (t >= c.duration) return sweep_end + c.f1 * (t - c.duration);
    return c.f0 * t + 0.5 * (c.f1 - c.f0) * t * t / c.duration;
}

inline double eval_reference_scalar(const ReferenceSignal& sig, long k, double Ts) {
    const double t = static_cast<double>(k) * Ts;
    struct Visitor {
        double t;
        double operator()(const ZeroReference&) const { return 0.0; }
        double operator()(const CosineReference& c) const { return c.amplitude * std::cos(c.omega * t); }
        double operator()(const ChirpReference& c) const {
            return c.amplitude * std::cos(2.0 * std::numbers::pi * chirp_phase(c, t));
        }
    };
    return std::visit(Visitor{t}, sig);
}

/// Reference at step k; the scalar signal drives every one of the q input channels.
inline Vector eval_reference(const ReferenceSignal& sig, long k, double Ts, Eigen::Index q = 1) {
    return Vector::Constant(q, eval_reference_scalar(sig, k, Ts));
}

} // namespace etl
