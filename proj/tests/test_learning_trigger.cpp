#include <cmath>

#include <gtest/gtest.h>

#include "etl/learning_trigger.hpp"
#include "etl/random.hpp"

namespace {

etl::TauWindow filled_count(std::size_t N, double value) {
    auto w = etl::TauWindow::count(N);
    for (std::size_t i = 0; i < N; ++i) w.push(0.01 * static_cast<double>(i + 1), value);
    return w;
}

etl::StoppingTimeEstimate sim_with_mean(double mean, std::size_t M) { return {mean, M, {}}; }

} // namespace

TEST(Kappa, ExactValues) {
    EXPECT_NEAR(etl::kappa_exact(0.05, 2000, 3.5), 3.5 * std::sqrt(std::log(40.0) / 4000.0), 1e-15);
    EXPECT_NEAR(etl::kappa_exact(0.05, 2000, 3.5), 0.1063, 5e-5);
    EXPECT_EQ(etl::kappa_exact(2.0, 2000, 3.5), 0.0);
    EXPECT_NEAR(etl::kappa_exact(0.05, 8000, 3.5), 0.5 * etl::kappa_exact(0.05, 2000, 3.5), 1e-15);
}

TEST(Kappa, ApproxValues) {
    EXPECT_NEAR(etl::kappa_approx(0.05, 2000, 3.5), 0.2317, 5e-5);
    EXPECT_NEAR(etl::kappa_approx(0.05, 2000, 3.5), 3.5 * std::sqrt(2.0 / 2000.0 * std::log(80.0)), 1e-15);
    EXPECT_EQ(etl::kappa_approx(4.0, 2000, 3.5), 0.0);
}

TEST(Kappa, RatioAcrossEtaGrid) {
    for (int i = 1; i < 100; ++i) {
        const double eta = i / 100.0;
        const double ratio = etl::kappa_approx(eta, 500, 2.0) / etl::kappa_exact(eta, 500, 2.0);
        EXPECT_NEAR(ratio, 2.0 * std::sqrt(std::log(4.0 / eta) / std::log(2.0 / eta)), 1e-12) << eta;
        EXPECT_GT(ratio, 2.0) << eta;
    }
}

TEST(TriggerConfig, Validation) {
    etl::TriggerConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.eta = 1.0;
    EXPECT_THROW(bad.validate(), etl::ConfigError);
    bad = c;
    bad.eta = 0.0;
    EXPECT_THROW(bad.validate(), etl::ConfigError);
    bad = c;
    bad.N = 0;
    EXPECT_THROW(bad.validate(), etl::ConfigError);
    bad = c;
    bad.M = bad.N;
    EXPECT_THROW(bad.validate(), etl::ConfigError);
    bad.mode = etl::TriggerMode::Exact;
    EXPECT_NO_THROW(bad.validate());
    bad = c;
    bad.kappa = 0.0;
    EXPECT_THROW(bad.validate(), etl::ConfigError);
    bad = c;
    bad.sustain = -1.0;
    EXPECT_THROW(bad.validate(), etl::ConfigError);
}

TEST(TriggerConfig, ThresholdHonoursOverride) {
    etl::TriggerConfig c;
    EXPECT_NEAR(c.threshold(2000), 0.2317, 5e-5);
    c.mode = etl::TriggerMode::Exact;
    EXPECT_NEAR(c.threshold(2000), 0.1063, 5e-5);
    c.kappa = 2.5;
    EXPECT_EQ(c.threshold(17), 2.5);
}

TEST(Evaluate, NoDecisionUntilFull) {
    auto w = etl::TauWindow::count(3);
    EXPECT_EQ(etl::evaluate_exact(w, 0.5, 0.1), std::nullopt);
    w.push(0.1, 5.0);
    w.push(0.2, 5.0);
    EXPECT_EQ(etl::evaluate_exact(w, 0.5, 0.1), std::nullopt);
    EXPECT_EQ(etl::evaluate_approx(w, sim_with_mean(0.5, 10), 0.1), std::nullopt);
    w.push(0.3, 5.0);
    EXPECT_EQ(etl::evaluate_exact(w, 0.5, 0.1), std::optional<bool>(true));
}

TEST(Evaluate, EqualMeansAndClosedBoundary) {
    const auto w = filled_count(4, 0.5);
    EXPECT_EQ(etl::evaluate_exact(w, 0.5, 0.1), std::optional<bool>(false));
    EXPECT_EQ(etl::evaluate_approx(w, sim_with_mean(0.5, 10), 0.1), std::optional<bool>(false));
    // 0.75 - 0.5 = 0.25 exactly in binary
    EXPECT_EQ(etl::evaluate_exact(w, 0.75, 0.25), std::optional<bool>(true));
    EXPECT_EQ(etl::evaluate_exact(w, 0.25, 0.25), std::optional<bool>(true));
    EXPECT_EQ(etl::evaluate_approx(w, sim_with_mean(0.75, 10), 0.25), std::optional<bool>(true));
}

TEST(Evaluate, ApproxNeedsMoreSimulatedSamples) {
    const auto w = filled_count(10, 0.5);
    EXPECT_THROW(etl::evaluate_approx(w, sim_with_mean(0.5, 10), 0.1), etl::ConfigError);
}

TEST(Evaluate, MismatchSituationFires) {
    // Window full of short intervals against the longer mismatched-model expectation.
    const auto w = filled_count(2000, 0.047);
    EXPECT_EQ(etl::evaluate_approx(w, sim_with_mean(0.67, 10000), etl::kappa_approx(0.05, 2000, 3.5)),
              std::optional<bool>(true));
}

TEST(Evaluate, LargerKappaNeverFlipsZeroToOne) {
    etl::RngStream rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        auto w = etl::TauWindow::count(20);
        for (int i = 0; i < 20; ++i) w.push(i, 3.5 * rng.uniform());
        const double expected = 3.5 * rng.uniform();
        bool seen_zero = false;
        for (double kappa = 0.01; kappa < 4.0; kappa += 0.05) {
            const bool d = *etl::evaluate_exact(w, expected, kappa);
            if (seen_zero) {
                EXPECT_FALSE(d);
            }
            seen_zero = seen_zero || !d;
        }
    }
}

TEST(Evaluate, FalsePositiveRateWithPerfectModel) {
    // Observed taus and the expectation both come from the same exit-time law.
    const etl::DiscreteErrorModel d{Eigen::MatrixXd::Constant(1, 1, 0.9), Eigen::MatrixXd::Constant(1, 1, 2.5e-5),
                                    0.01};
    const double expected = etl::mc_expected_stopping_time(d, 0.02, 200'000, 3.5, 1).mean;
    const auto observed =
        etl::mc_expected_stopping_time(d, 0.02, 500 * 200, 3.5, 2, {.threads = 0, .keep_samples = true}).samples;
    const double kappa = etl::kappa_exact(0.05, 200, 3.5);
    int fired = 0;
    for (int w = 0; w < 500; ++w) {
        auto win = etl::TauWindow::count(200);
        for (int i = 0; i < 200; ++i) win.push(i, observed[static_cast<std::size_t>(w * 200 + i)]);
        fired += *etl::evaluate_exact(win, expected, kappa) ? 1 : 0;
    }
    EXPECT_LE(fired / 500.0, 0.05);
}

TEST(TauWindow, CountModeKeepsNewest) {
    auto w = etl::TauWindow::count(3);
    for (int i = 1; i <= 5; ++i) w.push(i, i);
    EXPECT_EQ(w.size(), 3u);
    EXPECT_DOUBLE_EQ(w.mean(), 4.0);
    EXPECT_TRUE(w.full());
}

TEST(TauWindow, CountModeMeanStaysAccurate) {
    auto w = etl::TauWindow::count(100);
    etl::RngStream rng(5);
    std::vector<double> all;
    for (int i = 0; i < 50'000; ++i) {
        all.push_back(1e3 * rng.uniform());
        w.push(i, all.back());
    }
    double s = 0.0;
    for (std::size_t i = all.size() - 100; i < all.size(); ++i) s += all[i];
    EXPECT_NEAR(w.mean(), s / 100.0, 1e-9);
}

TEST(TauWindow, DurationModeEvictsOldSamples) {
    auto w = etl::TauWindow::duration(60.0, 2);
    w.clear(0.0);
    w.push(10.0, 1.0);
    w.push(50.0, 3.0);
    EXPECT_FALSE(w.full()); // only 50 s since the epoch
    w.advance_to(60.0);
    EXPECT_TRUE(w.full());
    EXPECT_DOUBLE_EQ(w.mean(), 2.0);
    w.advance_to(70.0); // sample from t = 10 leaves
    EXPECT_EQ(w.size(), 1u);
    EXPECT_FALSE(w.full()); // below the sample floor
    w.push(75.0, 5.0);
    EXPECT_TRUE(w.full());
    EXPECT_DOUBLE_EQ(w.mean(), 4.0);
    w.advance_to(1000.0);
    EXPECT_TRUE(w.empty());
}

TEST(TauWindow, ClearSuppressesDecisionsUntilRefilled) {
    auto c = filled_count(5, 1.0);
    ASSERT_TRUE(c.full());
    c.clear(10.0);
    EXPECT_EQ(etl::evaluate_exact(c, 0.0, 0.1), std::nullopt);
    for (int i = 0; i < 4; ++i) c.push(11.0 + i, 1.0);
    EXPECT_EQ(etl::evaluate_exact(c, 0.0, 0.1), std::nullopt);
    c.push(20.0, 1.0);
    EXPECT_EQ(etl::evaluate_exact(c, 0.0, 0.1), std::optional<bool>(true));

    auto d = etl::TauWindow::duration(60.0, 1);
    d.clear(0.0);
    for (int i = 1; i <= 100; ++i) d.push(i, 1.0);
    ASSERT_TRUE(d.full());
    d.clear(100.0);
    EXPECT_EQ(d.epoch(), 100.0);
    for (int i = 101; i < 160; ++i) d.push(i, 1.0);
    EXPECT_FALSE(d.full());
    d.advance_to(160.0);
    EXPECT_TRUE(d.full());
}

TEST(SustainedGate, ZeroSustainIsPassThrough) {
    etl::RngStream rng(3);
    std::vector<etl::TimedDecision> raw;
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform();
        raw.push_back({0.01 * i, u < 0.1 ? std::nullopt : std::optional<bool>(u < 0.55)});
    }
    const auto out = etl::sustained_gate(raw, 0.0);
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_EQ(out[i], raw[i].raw.value_or(false)) << i;
}

TEST(SustainedGate, FiresAfterSustainedInterval) {
    etl::SustainedGate gate(120.0);
    double fired_at = -1.0;
    for (long k = 1; k <= 50'000; ++k) {
        const double t = 0.01 * static_cast<double>(k);
        if (gate.update(t, t >= 240.0) && fired_at < 0.0) fired_at = t;
    }
    EXPECT_NEAR(fired_at, 360.0, 1e-6);
}

TEST(SustainedGate, SingleSpikeNeverFires) {
    std::vector<etl::TimedDecision> raw;
    for (int i = 0; i < 1000; ++i) raw.push_back({0.01 * i, i == 500});
    for (bool b : etl::sustained_gate(raw, 0.5)) EXPECT_FALSE(b);
}

TEST(SustainedGate, InterruptionRestartsClock) {
    etl::SustainedGate gate(1.0);
    EXPECT_FALSE(gate.update(0.0, true));
    EXPECT_FALSE(gate.update(0.9, true));
    EXPECT_FALSE(gate.update(0.95, std::nullopt));
    EXPECT_FALSE(gate.held_since().has_value());
    EXPECT_FALSE(gate.update(1.0, true));
    EXPECT_FALSE(gate.update(1.9, true));
    EXPECT_TRUE(gate.update(2.0, true));
    gate.reset();
    EXPECT_FALSE(gate.update(2.1, true));
    EXPECT_THROW(etl::SustainedGate(-1.0), etl::ConfigError);
}
