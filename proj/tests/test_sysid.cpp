#include <algorithm>

#include <gtest/gtest.h>

#include "etl/sysid.hpp"

using etl::Matrix;
using etl::Vector;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
Vector v1(double v) { return Vector::Constant(1, v); }

etl::LinearSystem scalar(double a, double b, double sigma) { return {m1(a), m1(b), m1(sigma), m1(0.0), 0.01}; }

Matrix theta(const etl::ModelEstimate& m) {
    Matrix t(m.A_cl.rows(), m.A_cl.cols() + m.B.cols());
    t << m.A_cl, m.B;
    return t;
}

const etl::ChirpReference kChirp{1.0, 0.05, 5.0, 30.0};

} // namespace

TEST(Assemble, SingleSample) {
    Vector x(2), r(1), xn(2);
    x << 1, 2;
    r << 3;
    xn << 4, 5;
    const std::vector<etl::Transition> traj{{x, r, xn}};
    const auto d = etl::assemble(traj);
    ASSERT_EQ(d.X.rows(), 3);
    ASSERT_EQ(d.X.cols(), 1);
    EXPECT_EQ(d.X(0, 0), 1);
    EXPECT_EQ(d.X(1, 0), 2);
    EXPECT_EQ(d.X(2, 0), 3);
    EXPECT_EQ(d.Y(0, 0), 4);
    EXPECT_EQ(d.Y(1, 0), 5);
    EXPECT_EQ(d.n(), 2);
    EXPECT_EQ(d.q(), 1);
}

TEST(Assemble, ShapeAndAlignmentFromTrajectory) {
    // A run visiting M + 1 states gives M columns.
    std::vector<Vector> states{v1(0.0)};
    for (int k = 0; k < 10; ++k) states.push_back(0.5 * states.back() + v1(k));
    std::vector<etl::Transition> traj;
    for (int k = 0; k < 10; ++k) traj.push_back({states[static_cast<std::size_t>(k)], v1(k), states[static_cast<std::size_t>(k) + 1]});
    const auto d = etl::assemble(traj);
    EXPECT_EQ(d.samples(), 10);
    for (int k = 0; k + 1 < 10; ++k) EXPECT_EQ(d.Y(0, k), d.X(0, k + 1));
}

TEST(Assemble, RejectsBadInput) {
    EXPECT_THROW(etl::assemble(std::vector<etl::Transition>{}), etl::ConfigError);
    const std::vector<etl::Transition> bad{{v1(0), v1(0), v1(0)}, {Vector::Zero(2), v1(0), Vector::Zero(2)}};
    EXPECT_THROW(etl::assemble(bad), etl::ConfigError);
}

TEST(OlsFit, NoiselessScalarRecoveredExactly) {
    etl::RngStream rng(1);
    const auto res = etl::run_learning_experiment(scalar(0.9, 0.01, 0.0), kChirp, 200, rng);
    EXPECT_NEAR(res.model.A_cl(0, 0), 0.9, 1e-8);
    EXPECT_NEAR(res.model.B(0, 0), 0.01, 1e-8);
    EXPECT_NEAR(res.model.Sigma(0, 0), 0.0, 1e-20);
    EXPECT_EQ(res.model.version, 1u);
    EXPECT_EQ(res.steps, 200);
}

TEST(OlsFit, NoiselessMultivariateRecovered) {
    Matrix A(3, 3), B(3, 2);
    A << 0.7, 0.1, 0.0, -0.2, 0.8, 0.1, 0.05, 0.0, 0.6;
    B << 1.0, 0.0, 0.2, 0.5, 0.0, 1.0;
    std::vector<etl::Transition> traj;
    Vector x = Vector::Zero(3);
    for (int k = 0; k < 400; ++k) {
        Vector r(2);
        r << std::cos(0.3 * k), std::sin(0.11 * k * k * 0.01);
        Vector xn = A * x + B * r;
        traj.push_back({x, r, xn});
        x = xn;
    }
    const auto m = etl::ols_fit(etl::assemble(traj), 4);
    EXPECT_LT((m.A_cl - A).norm(), 1e-8);
    EXPECT_LT((m.B - B).norm(), 1e-8);
    EXPECT_EQ(m.version, 5u);
}

TEST(OlsFit, ZeroRegressorIsInsufficientExcitation) {
    std::vector<etl::Transition> traj(50, {v1(0.0), v1(0.0), v1(0.0)});
    EXPECT_THROW(etl::ols_fit(etl::assemble(traj)), etl::InsufficientExcitation);
}

TEST(OlsFit, CollinearRegressorIsInsufficientExcitation) {
    // x tracks r exactly, so the rows of X are parallel.
    std::vector<etl::Transition> traj;
    for (int k = 0; k < 50; ++k) traj.push_back({v1(k), v1(2.0 * k), v1(0.1 * k)});
    EXPECT_THROW(etl::ols_fit(etl::assemble(traj)), etl::InsufficientExcitation);
}

TEST(OlsFit, TooFewSamples) {
    std::vector<etl::Transition> traj{{v1(1.0), v1(0.0), v1(0.9)}, {v1(0.9), v1(1.0), v1(0.82)}};
    EXPECT_THROW(etl::ols_fit(etl::assemble(traj)), etl::ConfigError);
    etl::RngStream rng(1);
    const etl::LinearSystem sys{Matrix::Identity(2, 2) * 0.5, Matrix::Ones(2, 1), Matrix::Zero(2, 2),
                                Matrix::Zero(1, 2), 0.01};
    EXPECT_THROW(etl::run_learning_experiment(sys, kChirp, 2, rng), etl::ConfigError);
}

TEST(OlsFit, ChirpMustCoverExperiment) {
    etl::RngStream rng(1);
    EXPECT_THROW(etl::run_learning_experiment(scalar(0.9, 0.01, 0.0), etl::ChirpReference{1.0, 0.05, 5.0, 10.0}, 3000,
                                              rng),
                 etl::ConfigError);
}

TEST(OlsFit, ScalarScenarioAccuracy) {
    etl::RngStream rng(2024);
    const auto res = etl::run_learning_experiment(scalar(0.9, 0.01, 2.5e-5), kChirp, 3000, rng);
    Matrix truth(1, 2);
    truth << 0.9, 0.01;
    EXPECT_LT((theta(res.model) - truth).norm(), 0.02);
    EXPECT_GE(res.model.Sigma(0, 0), 2.0e-5);
    EXPECT_LE(res.model.Sigma(0, 0), 3.0e-5);
    EXPECT_NEAR(res.steps * 0.01, 30.0, 1e-12);
}

TEST(OlsFit, ResidualIsOrthogonalToRegressors) {
    const etl::LinearSystem sys{(Matrix(2, 2) << 0.9, 0.05, -0.1, 0.8).finished(), (Matrix(2, 1) << 0.0, 0.01).finished(),
                                (Matrix(2, 2) << 2e-5, 5e-6, 5e-6, 1e-5).finished(), Matrix::Zero(1, 2), 0.01};
    etl::RngStream rng(9);
    etl::GaussianNoise noise(sys.Sigma());
    std::vector<etl::Transition> traj;
    Vector x = Vector::Zero(2);
    for (long k = 0; k < 2000; ++k) {
        const Vector r = v1(etl::eval_reference_scalar(kChirp, k, 0.01));
        Vector xn = etl::step(sys, x, r, noise(rng));
        traj.push_back({x, r, xn});
        x = xn;
    }
    const auto d = etl::assemble(traj);
    const auto m = etl::ols_fit(d);
    const Matrix R = d.Y - theta(m) * d.X;
    EXPECT_LT((R * d.X.transpose()).norm(), 1e-8 * d.Y.norm());
    // Sigma is symmetric PSD.
    EXPECT_EQ(m.Sigma, m.Sigma.transpose());
    EXPECT_GE(etl::min_symmetric_eigenvalue(m.Sigma), 0.0);
}

TEST(OlsFit, ErrorShrinksWithMoreData) {
    const auto sys = scalar(0.9, 0.01, 2.5e-5);
    Matrix truth(1, 2);
    truth << 0.9, 0.01;
    auto median_error = [&](Eigen::Index M) {
        std::vector<double> errors;
        const etl::ChirpReference chirp{1.0, 0.05, 5.0, static_cast<double>(M) * 0.01};
        for (std::uint64_t trial = 0; trial < 60; ++trial) {
            auto rng = etl::RngStream::substream(555, trial);
            errors.push_back((theta(etl::run_learning_experiment(sys, chirp, M, rng).model) - truth).norm());
        }
        std::nth_element(errors.begin(), errors.begin() + 30, errors.end());
        return errors[30];
    };
    const double small = median_error(1000);
    const double large = median_error(16000);
    EXPECT_GE(small / large, 2.0) << small << " " << large;
}

TEST(OlsFit, RefittingModelGeneratedDataIsIdempotent) {
    etl::RngStream rng(3);
    const auto first = etl::run_learning_experiment(scalar(0.9, 0.01, 2.5e-5), kChirp, 3000, rng).model;
    const etl::LinearSystem fitted{first.A_cl, first.B, Matrix::Zero(1, 1), m1(0.0), 0.01};
    const auto second = etl::run_learning_experiment(fitted, kChirp, 3000, rng, v1(0.1)).model;
    EXPECT_NEAR(second.A_cl(0, 0), first.A_cl(0, 0), 1e-13);
    EXPECT_NEAR(second.B(0, 0), first.B(0, 0), 1e-13);
}

TEST(LearningExperiment, StepwiseMatchesBatch) {
    const auto sys = scalar(0.9, 0.01, 2.5e-5);
    etl::RngStream a(8), b(8);
    const auto batch = etl::run_learning_experiment(sys, kChirp, 500, a).model;

    etl::LearningExperiment exp(kChirp, 500, 0.01);
    etl::GaussianNoise noise(sys.Sigma());
    Vector x = Vector::Zero(1);
    while (!exp.done()) {
        const Vector r = v1(exp.reference());
        Vector xn = etl::step(sys, x, r, noise(b));
        exp.record(x, r, xn);
        x = xn;
    }
    const auto step = exp.fit(0);
    EXPECT_EQ(step.A_cl(0, 0), batch.A_cl(0, 0));
    EXPECT_EQ(step.B(0, 0), batch.B(0, 0));
    EXPECT_THROW(exp.record(x, v1(0.0), x), etl::ConfigError);
}
