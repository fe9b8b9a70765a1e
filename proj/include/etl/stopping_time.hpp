#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <sstream>
#include <thread>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <Eigen/LU>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "etl/linalg.hpp"
#include "etl/random.hpp"

namespace etl {

/// Exact sampled form of a linear Gaussian error process: Z(k+1) = Phi Z(k) + eps, eps ~ N(0, Sigma).
struct DiscreteErrorModel {
    Matrix Phi;
    Matrix Sigma;
    double step = 0.0; ///< sampling period in seconds
};

/**
 * Covariance of the sampled noise, W(h) = int_0^h e^{A s} P e^{A^T s} ds,
 * via Van Loan's block exponential. P is the diffusion covariance Q Q^T.
 */
inline DiscreteErrorModel van_loan(const Matrix& drift, const Matrix& diffusion_cov, double h) {
    const auto n = drift.rows();
    Matrix C = Matrix::Zero(2 * n, 2 * n);
    C.topLeftCorner(n, n) = -drift;
    C.topRightCorner(n, n) = diffusion_cov;
    C.bottomRightCorner(n, n) = drift.transpose();
    const Matrix E = (C * h).exp();
    DiscreteErrorModel d;
    d.Phi = E.bottomRightCorner(n, n).transpose();
    d.Sigma = symmetrize(d.Phi * E.topRightCorner(n, n));
    d.step = h;
    return d;
}

/**
 * @brief Continuous-time Ornstein-Uhlenbeck error process dZ = A Z dt + Q dW.
 *
 * Carries the sampled pair (Phi, Sigma) it was built from so grid-matched
 * simulation at the native period reuses the original matrices exactly.
 */
class OuProcess {
public:
    OuProcess(Matrix drift, Matrix diffusion_cov, double delta, double Ts, DiscreteErrorModel native)
        : drift_(std::move(drift)), diffusion_cov_(symmetrize(diffusion_cov)), delta_(delta), Ts_(Ts),
          native_(std::move(native)) {
        if (!(delta_ > 0.0)) throw ConfigError("delta must be positive");
        if (!(Ts_ > 0.0)) throw ConfigError("sample time must be positive");
        if (drift_.size() > 0 && drift_.eigenvalues().real().maxCoeff() > 1e-12)
            throw ConfigError("OU drift must not have eigenvalues with positive real part");
        diffusion_ = psd_sqrt(diffusion_cov_, 1e-9 * std::max(1.0, diffusion_cov_.norm()));
    }

    const Matrix& drift() const { return drift_; }
    const Matrix& diffusion() const { return diffusion_; }         ///< symmetric PSD Q
    const Matrix& diffusion_cov() const { return diffusion_cov_; } ///< Q Q^T
    double delta() const { return delta_; }
    double Ts() const { return Ts_; }
    Eigen::Index n() const { return drift_.rows(); }

    const DiscreteErrorModel& discrete() const { return native_; }

    /// Exact transition at an arbitrary sampling period.
    DiscreteErrorModel at_step(double h) const { return van_loan(drift_, diffusion_cov_, h); }

private:
    Matrix drift_, diffusion_cov_, diffusion_;
    double delta_, Ts_;
    DiscreteErrorModel native_;
};

namespace detail {

/// Principal real logarithm exists iff no eigenvalue lies on the closed negative real axis.
inline bool has_real_log(const Matrix& A) {
    const auto ev = A.eigenvalues();
    const double scale = std::max(1.0, A.norm());
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev[i].real() <= 0.0 && std::abs(ev[i].imag()) <= 1e-12 * scale) return false;
    return true;
}

/// G(h) = int_0^h e^{K s} ds through the exponential of [[K, I], [0, 0]] h.
inline Matrix integrated_exponential(const Matrix& K, double h) {
    const auto m = K.rows();
    Matrix C = Matrix::Zero(2 * m, 2 * m);
    C.topLeftCorner(m, m) = K;
    C.topRightCorner(m, m) = Matrix::Identity(m, m);
    return (C * h).exp().topRightCorner(m, m);
}

} // namespace detail

/**
 * @brief Solve the covariance-matching equation for Q Q^T.
 *
 * With vec(e^{As} P e^{A^T s}) = e^{(A (+) A) s} vec(P) the integral equation
 * becomes the linear system G vec(P) = vec(Sigma), G = int_0^h e^{(A (+) A) s} ds,
 * which stays regular for a zero drift (G = h I) where the Stein form
 * A_cl P A_cl^T - P = A Sigma + Sigma A^T degenerates.
 */
inline Matrix match_diffusion_covariance(const Matrix& drift, const Matrix& Sigma, double h) {
    const auto n = drift.rows();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix K = Eigen::kroneckerProduct(drift, I).eval() + Eigen::kroneckerProduct(I, drift).eval();
    const Matrix G = detail::integrated_exponential(K, h);
    const Eigen::FullPivLU<Matrix> lu(G);
    if (!lu.isInvertible()) throw NumericalError("covariance-matching system is singular");
    const Vector vecP = lu.solve(Eigen::Map<const Vector>(Sigma.data(), Sigma.size()));
    return symmetrize(Eigen::Map<const Matrix>(vecP.data(), n, n));
}

/// Continuous embedding of the prediction-error dynamics (A_cl, Sigma) sampled at Ts.
inline OuProcess discretize_to_ou(const Matrix& A_cl, const Matrix& Sigma, double Ts, double delta) {
    const auto n = A_cl.rows();
    if (n == 0 || A_cl.cols() != n || Sigma.rows() != n || Sigma.cols() != n)
        throw ConfigError("discretize_to_ou: A_cl and Sigma must be square and of equal size");
    if (!(Ts > 0.0)) throw ConfigError("discretize_to_ou: sample time must be positive");
    if (!detail::has_real_log(A_cl))
        throw NumericalError("A_cl has an eigenvalue on the closed negative real axis; no real matrix "
                             "logarithm exists, so the continuous-time embedding fails");

    const Matrix drift = A_cl.log() / Ts;
    if (!drift.allFinite()) throw NumericalError("matrix logarithm of A_cl did not converge");
    const double roundtrip = ((drift * Ts).exp() - A_cl).norm();
    if (roundtrip > 1e-9 * std::max(1.0, A_cl.norm())) {
        std::ostringstream os;
        os << "continuous embedding round trip failed (error " << roundtrip << ")";
        throw NumericalError(os.str());
    }

    const Matrix P = match_diffusion_covariance(drift, Sigma, Ts);
    const double tol = 1e-9 * std::max(P.norm(), std::numeric_limits<double>::min());
    if (min_symmetric_eigenvalue(P) < -tol)
        throw NumericalError("covariance-matching solution is not positive semi-definite");
    return OuProcess(drift, P, delta, Ts, DiscreteErrorModel{A_cl, symmetrize(Sigma), Ts});
}

// Monte Carlo -----------------------------------------------------------------

struct StoppingTimeEstimate {
    double mean = 0.0;
    std::size_t sample_count = 0;
    std::vector<double> samples; ///< seconds; empty unless requested
};

struct McOptions {
    unsigned threads = 0; ///< 0 picks hardware concurrency
    bool keep_samples = false;
};

namespace detail {

/**
 * Simulates one path at the fine step and reports, for every stride s, the
 * first fine-step index that is a multiple of s with ||Z|| >= delta, capped at
 * max_steps. strides are in fine steps; out has one slot per stride.
 */
inline void exit_steps(const DiscreteErrorModel& fine, const Matrix& factor, double delta, long max_steps,
                       std::span<const long> strides, RngStream& rng, std::span<long> out) {
    std::fill(out.begin(), out.end(), max_steps);
    std::size_t open = strides.size();
    std::vector<bool> stopped(strides.size(), false);
    const double delta2 = delta * delta;

    auto settle = [&](long k, double norm2) {
        for (std::size_t j = 0; j < strides.size(); ++j) {
            if (stopped[j] || k % strides[j] != 0) continue;
            if (norm2 >= delta2) {
                out[j] = k;
                stopped[j] = true;
                --open;
            }
        }
    };

    if (fine.Phi.rows() == 1) {
        const double phi = fine.Phi(0, 0);
        const double l = factor(0, 0);
        double z = 0.0;
        for (long k = 1; k <= max_steps && open > 0; ++k) {
            z = phi * z + l * rng.normal();
            settle(k, z * z);
        }
        return;
    }

    const auto n = fine.Phi.rows();
    Vector z = Vector::Zero(n), w(n), next(n);
    for (long k = 1; k <= max_steps && open > 0; ++k) {
        for (Eigen::Index i = 0; i < n; ++i) w[i] = rng.normal();
        next.noalias() = fine.Phi * z;
        next.noalias() += factor * w;
        z.swap(next);
        settle(k, z.squaredNorm());
    }
}

inline unsigned resolve_threads(unsigned requested, std::size_t work) {
    unsigned t = requested != 0 ? requested : std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::size_t>(t, std::max<std::size_t>(work, 1)));
}

/// Runs `paths` independent paths; path i draws from substream(seed, i). Result is [path][stride].
inline std::vector<long> run_paths(const DiscreteErrorModel& fine, double delta, long max_steps,
                                   std::span<const long> strides, std::size_t paths, std::uint64_t seed,
                                   unsigned threads) {
    const Matrix factor = psd_sqrt(fine.Sigma, 1e-12 * std::max(1.0, fine.Sigma.norm()));
    const std::size_t width = strides.size();
    std::vector<long> result(paths * width);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto rng = RngStream::substream(seed, i);
            exit_steps(fine, factor, delta, max_steps, strides, rng, std::span<long>(result).subspan(i * width, width));
        }
    };
    const unsigned t = resolve_threads(threads, paths);
    if (t == 1) {
        work(0, paths);
        return result;
    }
    std::vector<std::jthread> pool;
    const std::size_t chunk = (paths + t - 1) / t;
    for (unsigned w = 0; w < t; ++w) {
        const std::size_t b = std::min(paths, w * chunk);
        const std::size_t e = std::min(paths, b + chunk);
        if (b < e) pool.emplace_back(work, b, e);
    }
    pool.clear(); // joins
    return result;
}

inline long steps_for(double seconds, double h) {
    return std::max(1L, static_cast<long>(std::llround(seconds / h)));
}

} // namespace detail

/**
 * @brief Grid-matched Monte Carlo estimate of the expected exit time.
 *
 * Simulates the exact sampled error process from Z = 0 at its own period and
 * stops each path at the first sample with ||Z|| >= delta; paths that have not
 * exited by tau_max contribute tau_max. Results do not depend on the thread
 * count.
 */
inline StoppingTimeEstimate mc_expected_stopping_time(const DiscreteErrorModel& process, double delta,
                                                      std::size_t paths, double tau_max, std::uint64_t seed,
                                                      McOptions opts = {}) {
    if (paths < 1) throw ConfigError("Monte Carlo needs at least one path");
    if (!(tau_max > 0.0)) throw ConfigError("tau_max must be positive");
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    const long max_steps = detail::steps_for(tau_max, process.step);
    const long stride = 1;
    const auto steps = detail::run_paths(process, delta, max_steps, std::span<const long>(&stride, 1), paths, seed,
                                         opts.threads);
    StoppingTimeEstimate est;
    est.sample_count = paths;
    double sum = 0.0;
    if (opts.keep_samples) est.samples.reserve(paths);
    for (long s : steps) {
        const double tau = static_cast<double>(s) * process.step;
        sum += tau;
        if (opts.keep_samples) est.samples.push_back(tau);
    }
    est.mean = sum / static_cast<double>(paths);
    return est;
}

inline StoppingTimeEstimate mc_expected_stopping_time(const OuProcess& ou, std::size_t paths, double tau_max,
                                                      std::uint64_t seed, McOptions opts = {}) {
    return mc_expected_stopping_time(ou.discrete(), ou.delta(), paths, tau_max, seed, opts);
}

struct RefinedStoppingTime {
    std::vector<double> steps; ///< coarse to fine
    std::vector<double> means;
    double extrapolated = 0.0;
};

/**
 * @brief Exit-time means on a ladder of halved sampling periods plus their
 *        extrapolation to continuous monitoring.
 *
 * All levels share the same paths: the process is simulated at the finest
 * period and level j only checks the threshold every 2^(levels-1-j) fine
 * steps. The discrete-monitoring bias behaves like a power series in
 * sqrt(h), so the means are extrapolated to h = 0 with the interpolating
 * polynomial in sqrt(h).
 */
inline RefinedStoppingTime mc_stopping_time_refined(const OuProcess& ou, double coarsest_step, int levels,
                                                    std::size_t paths, double tau_max, std::uint64_t seed,
                                                    McOptions opts = {}) {
    if (levels < 2 || levels > 10) throw ConfigError("refinement needs between 2 and 10 levels");
    if (!(coarsest_step > 0.0)) throw ConfigError("refinement step must be positive");
    const double fine_step = coarsest_step / static_cast<double>(1L << (levels - 1));
    const DiscreteErrorModel fine = ou.at_step(fine_step);
    const long max_steps = detail::steps_for(tau_max, fine_step);

    std::vector<long> strides;
    for (int j = 0; j < levels; ++j) strides.push_back(1L << (levels - 1 - j));
    const auto steps = detail::run_paths(fine, ou.delta(), max_steps, strides, paths, seed, opts.threads);

    RefinedStoppingTime out;
    for (int j = 0; j < levels; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < paths; ++i)
            sum += static_cast<double>(steps[i * static_cast<std::size_t>(levels) + static_cast<std::size_t>(j)]);
        out.steps.push_back(fine_step * static_cast<double>(strides[static_cast<std::size_t>(j)]));
        out.means.push_back(sum * fine_step / static_cast<double>(paths));
    }
    for (std::size_t j = 0; j < out.steps.size(); ++j) {
        double w = 1.0;
        const double xj = std::sqrt(out.steps[j]);
        for (std::size_t m = 0; m < out.steps.size(); ++m) {
            if (m == j) continue;
            const double xm = std::sqrt(out.steps[m]);
            w *= xm / (xm - xj);
        }
        out.extrapolated += w * out.means[j];
    }
    return out;
}

/**
 * @brief Expected exit time from (-delta, delta) of the scalar OU process
 *        dZ = a Z dt + q dW started at 0.
 *
 * Solves (1/2) q^2 v'' + a x v' = -1, v(+-delta) = 0. With c = -a / q^2 the
 * integrating factor gives
 *
 *   v(0) = (2 / q^2) int_0^delta e^{c x^2} int_0^x e^{-c y^2} dy dx,
 *
 * whose inner integral is closed-form in erf; the outer one is evaluated with
 * adaptive Gauss-Kronrod quadrature. a = 0 reduces to delta^2 / q^2.
 */
inline double bvp_expected_exit_time_1d(double acal, double q, double delta) {
    if (!(acal <= 0.0)) throw ConfigError("bvp oracle requires a non-positive drift");
    if (!(q > 0.0) || !(delta > 0.0)) throw ConfigError("bvp oracle requires q > 0 and delta > 0");
    const double q2 = q * q;
    if (acal == 0.0) return delta * delta / q2;

    const double c = -acal / q2;
    const double sc = std::sqrt(c);
    const double inner_scale = std::sqrt(std::numbers::pi) / (2.0 * sc);
    auto integrand = [&](double x) { return std::exp(c * x * x) * inner_scale * std::erf(sc * x); };

    double err = 0.0;
    const double value =
        boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, delta, 15, 1e-13, &err);
    if (!std::isfinite(value) || err > 1e-9 * std::abs(value)) {
        std::ostringstream os;
        os << "exit-time quadrature did not converge (value " << value << ", error " << err << ")";
        throw NumericalError(os.str());
    }
    return 2.0 / q2 * value;
}

} // namespace etl
