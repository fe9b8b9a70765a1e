#pragma once

#include <span>
#include <sstream>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "etl/lti.hpp"
#include "etl/protocol.hpp"

namespace etl {

/// One observed transition of the closed loop.
struct Transition {
    Vector x;
    Vector r;
    Vector x_next;
};

/// Stacked regression: column i of Y is the successor of column i of X = [x; r].
struct RegressionData {
    Matrix X;
    Matrix Y;

    Eigen::Index samples() const { return X.cols(); }
    Eigen::Index n() const { return Y.rows(); }
    Eigen::Index q() const { return X.rows() - Y.rows(); }
};

inline RegressionData assemble(std::span<const Transition> trajectory) {
    if (trajectory.empty()) throw ConfigError("assemble: trajectory is empty");
    const auto n = trajectory.front().x.size();
    const auto q = trajectory.front().r.size();
    RegressionData d{Matrix(n + q, static_cast<Eigen::Index>(trajectory.size())),
                     Matrix(n, static_cast<Eigen::Index>(trajectory.size()))};
    for (std::size_t i = 0; i < trajectory.size(); ++i) {
        const auto& s = trajectory[i];
        if (s.x.size() != n || s.r.size() != q || s.x_next.size() != n) {
            std::ostringstream os;
            os << "assemble: sample " << i << " has inconsistent dimensions";
            throw ConfigError(os.str());
        }
        const auto col = static_cast<Eigen::Index>(i);
        d.X.col(col) << s.x, s.r;
        d.Y.col(col) = s.x_next;
    }
    return d;
}

/// Largest admissible condition number of X X^T.
inline constexpr double kMaxGramCondition = 1e12;

/**
 * @brief Ordinary least squares fit of [A_cl B] and the residual covariance.
 *
 * Solves min ||[A_cl B] X - Y||_F with column-pivoted QR on X^T, which yields
 * Y X^T (X X^T)^-1 without forming the inverse. The noise covariance is the
 * residual outer-product sum divided by M - n - q. The returned model carries
 * `previous_version + 1`.
 */
inline ModelEstimate ols_fit(const RegressionData& d, std::uint64_t previous_version = 0) {
    const auto n = d.n();
    const auto q = d.q();
    const auto M = d.samples();
    if (d.Y.cols() != M || q < 1 || n < 1) throw ConfigError("ols_fit: X and Y are not column-aligned");
    if (M <= n + q) {
        std::ostringstream os;
        os << "ols_fit: need more than n + q = " << n + q << " samples, got " << M;
        throw ConfigError(os.str());
    }

    const Matrix Xt = d.X.transpose();
    const Vector sv = Eigen::BDCSVD<Matrix>(Xt).singularValues();
    const double smax = sv.maxCoeff();
    const double smin = sv.minCoeff();
    if (!(smin > 0.0) || (smax / smin) * (smax / smin) >= kMaxGramCondition) {
        std::ostringstream os;
        os << "insufficient excitation: regressor Gram matrix condition number "
           << (smin > 0.0 ? (smax / smin) * (smax / smin) : std::numeric_limits<double>::infinity());
        throw InsufficientExcitation(os.str());
    }

    const Matrix theta = Xt.colPivHouseholderQr().solve(d.Y.transpose()).transpose();
    const Matrix residual = d.Y - theta * d.X;

    ModelEstimate m;
    m.A_cl = theta.leftCols(n);
    m.B = theta.rightCols(q);
    m.Sigma = symmetrize(residual * residual.transpose() / static_cast<double>(M - n - q));
    m.version = previous_version + 1;
    return m;
}

/**
 * @brief Records a chirp-excited experiment one step at a time.
 *
 * The harness drives this so that every experiment step still produces a
 * trace record; run_learning_experiment below is the batch form.
 */
class LearningExperiment {
public:
    LearningExperiment(ChirpReference chirp, Eigen::Index samples, double Ts)
        : chirp_(chirp), samples_(samples), Ts_(Ts) {
        validate(chirp_);
        if (samples_ < 1) throw ConfigError("learning experiment needs at least one sample");
        if (chirp_.duration + 1e-9 < static_cast<double>(samples_) * Ts_)
            throw ConfigError("chirp duration must cover the experiment (M * Ts)");
        data_.reserve(static_cast<std::size_t>(samples_));
    }

    /// Reference for the next transition.
    double reference() const { return eval_reference_scalar(chirp_, static_cast<long>(data_.size()), Ts_); }

    void record(Vector x, Vector r, Vector x_next) {
        if (done()) throw ConfigError("learning experiment already complete");
        data_.push_back({std::move(x), std::move(r), std::move(x_next)});
    }

    bool done() const { return static_cast<Eigen::Index>(data_.size()) >= samples_; }
    Eigen::Index samples() const { return samples_; }

    ModelEstimate fit(std::uint64_t previous_version) const { return ols_fit(assemble(data_), previous_version); }

private:
    ChirpReference chirp_;
    Eigen::Index samples_;
    double Ts_;
    std::vector<Transition> data_;
};

struct LearningResult {
    ModelEstimate model;
    Vector final_state;
    long steps = 0;
};

/// Runs the true closed loop under the chirp for M transitions from x0 and fits a model.
inline LearningResult run_learning_experiment(const LinearSystem& sys, const ChirpReference& chirp, Eigen::Index M,
                                              RngStream& rng, const Vector& x0, std::uint64_t previous_version = 0) {
    if (M < sys.n() + sys.q()) throw ConfigError("learning experiment needs M >= n + q samples");
    LearningExperiment exp(chirp, M, sys.Ts());
    const GaussianNoise noise(sys.Sigma());
    Vector x = x0;
    while (!exp.done()) {
        const Vector r = Vector::Constant(sys.q(), exp.reference());
        Vector x_next = step(sys, x, r, noise(rng));
        exp.record(x, r, x_next);
        x = std::move(x_next);
    }
    return {exp.fit(previous_version), x, static_cast<long>(M)};
}

inline LearningResult run_learning_experiment(const LinearSystem& sys, const ChirpReference& chirp, Eigen::Index M,
                                              RngStream& rng) {
    return run_learning_experiment(sys, chirp, M, rng, Vector::Zero(sys.n()));
}

} // namespace etl
