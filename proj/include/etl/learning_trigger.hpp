#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "etl/errors.hpp"
#include "etl/stopping_time.hpp"

namespace etl {

/// Hoeffding threshold for comparing an N-sample mean against the exact E[tau].
inline double kappa_exact(double eta, double N, double tau_max) {
    return tau_max * std::sqrt(-1.0 / (2.0 * N) * std::log(eta / 2.0));
}

/// Threshold when E[tau] itself is replaced by an M-sample simulation mean (M > N).
inline double kappa_approx(double eta, double N, double tau_max) {
    return tau_max * std::sqrt(-2.0 / N * std::log(eta / 4.0));
}

enum class TriggerMode { Exact, Approximated };
enum class WindowKind { Count, Duration };

struct TriggerConfig {
    double eta = 0.05;
    WindowKind window = WindowKind::Count;
    std::size_t N = 2000;          ///< count-mode window size
    double window_seconds = 60.0;  ///< duration-mode window length
    std::size_t min_samples = 10;  ///< duration-mode floor before any decision
    std::size_t M = 10000;         ///< simulation samples for the model-implied mean
    double tau_max = 3.5;
    std::optional<double> kappa;   ///< user override; not covered by the Hoeffding guarantee
    double sustain = 0.0;          ///< seconds the raw decision must hold
    TriggerMode mode = TriggerMode::Approximated;

    void validate() const {
        if (!(eta > 0.0 && eta < 1.0)) throw ConfigError("trigger.eta must lie in (0, 1)");
        if (!(tau_max > 0.0)) throw ConfigError("trigger.tau_max must be positive");
        if (!(sustain >= 0.0)) throw ConfigError("trigger.sustain must be non-negative");
        if (M < 1) throw ConfigError("trigger.sim_samples must be positive");
        if (window == WindowKind::Count) {
            if (N < 1) throw ConfigError("trigger.window.size must be at least 1");
            if (mode == TriggerMode::Approximated && M <= N)
                throw ConfigError("trigger.sim_samples must exceed trigger.window.size in approximated mode");
        } else {
            if (!(window_seconds > 0.0)) throw ConfigError("trigger.window.seconds must be positive");
            if (min_samples < 1) throw ConfigError("trigger.window.min_samples must be at least 1");
            if (mode == TriggerMode::Approximated && M <= min_samples)
                throw ConfigError("trigger.sim_samples must exceed trigger.window.min_samples in approximated mode");
        }
        if (kappa && !(*kappa > 0.0)) throw ConfigError("trigger.kappa must be positive");
    }

    /// Threshold for a window currently holding `samples` observations.
    double threshold(std::size_t samples) const {
        if (kappa) return *kappa;
        const auto n = static_cast<double>(samples);
        return mode == TriggerMode::Exact ? kappa_exact(eta, n, tau_max) : kappa_approx(eta, n, tau_max);
    }
};

/**
 * @brief Window of recent inter-communication times.
 *
 * Count mode keeps the last N samples and is full once N have been seen since
 * the last reset. Duration mode keeps samples observed in the trailing T
 * seconds and is full once T seconds have passed since the reset and at least
 * min_samples are held.
 */
class TauWindow {
public:
    static TauWindow count(std::size_t N) { return TauWindow(WindowKind::Count, N, 0.0, 1); }
    static TauWindow duration(double seconds, std::size_t min_samples) {
        return TauWindow(WindowKind::Duration, 0, seconds, min_samples);
    }
    static TauWindow from(const TriggerConfig& cfg) {
        return cfg.window == WindowKind::Count ? count(cfg.N) : duration(cfg.window_seconds, cfg.min_samples);
    }

    /// Record a sample observed at time t (seconds).
    void push(double t, double tau) {
        advance_to(t);
        samples_.push_back({t, tau});
        sum_ += tau;
        if (kind_ == WindowKind::Count && samples_.size() > N_) pop_front();
    }

    /// Move the clock; duration mode evicts samples older than t - T.
    void advance_to(double t) {
        now_ = std::max(now_, t);
        if (kind_ != WindowKind::Duration) return;
        while (!samples_.empty() && samples_.front().t <= now_ - seconds_ + 1e-9) pop_front();
    }

    /// Empties the window and restarts the epoch at time t.
    void clear(double t) {
        samples_.clear();
        sum_ = 0.0;
        epoch_ = t;
        now_ = t;
    }

    bool full() const {
        if (kind_ == WindowKind::Count) return samples_.size() >= N_;
        return now_ - epoch_ >= seconds_ - 1e-9 && samples_.size() >= min_samples_;
    }

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    double mean() const { return samples_.empty() ? 0.0 : sum_ / static_cast<double>(samples_.size()); }
    double epoch() const { return epoch_; }
    WindowKind kind() const { return kind_; }

private:
    struct Entry {
        double t;
        double tau;
    };

    TauWindow(WindowKind kind, std::size_t N, double seconds, std::size_t min_samples)
        : kind_(kind), N_(N), seconds_(seconds), min_samples_(min_samples) {}

    void pop_front() {
        sum_ -= samples_.front().tau;
        samples_.pop_front();
        // Periodic resummation keeps the running sum from drifting.
        if (++pops_ % 4096 == 0) {
            sum_ = 0.0;
            for (const auto& e : samples_) sum_ += e.tau;
        }
    }

    WindowKind kind_;
    std::size_t N_;
    double seconds_;
    std::size_t min_samples_;
    std::deque<Entry> samples_;
    double sum_ = 0.0;
    double epoch_ = 0.0;
    double now_ = 0.0;
    std::size_t pops_ = 0;
};

/// 1 iff |mean(window) - expected| >= kappa; no decision until the window is full.
inline std::optional<bool> evaluate_exact(const TauWindow& window, double expected_tau, double kappa) {
    if (!window.full()) return std::nullopt;
    return std::abs(window.mean() - expected_tau) >= kappa;
}

inline std::optional<bool> evaluate_approx(const TauWindow& window, const StoppingTimeEstimate& sim, double kappa) {
    if (!window.full()) return std::nullopt;
    if (sim.sample_count <= window.size())
        throw ConfigError("approximated trigger needs more simulated than empirical samples");
    return std::abs(window.mean() - sim.mean) >= kappa;
}

/**
 * @brief Passes a raw decision through only after it has held continuously for
 *        `sustain` seconds. A missing decision or a 0 restarts the clock.
 */
class SustainedGate {
public:
    explicit SustainedGate(double sustain) : sustain_(sustain) {
        if (!(sustain_ >= 0.0)) throw ConfigError("sustain must be non-negative");
    }

    bool update(double t, std::optional<bool> raw) {
        if (!raw.value_or(false)) {
            holding_ = false;
            return false;
        }
        if (!holding_) {
            holding_ = true;
            since_ = t;
        }
        return t - since_ >= sustain_ - 1e-9;
    }

    /// Time at which the current run of raw 1-decisions started.
    std::optional<double> held_since() const { return holding_ ? std::optional<double>(since_) : std::nullopt; }
    void reset() { holding_ = false; }

private:
    double sustain_;
    bool holding_ = false;
    double since_ = 0.0;
};

struct TimedDecision {
    double t;
    std::optional<bool> raw;
};

inline std::vector<bool> sustained_gate(std::span<const TimedDecision> raw, double sustain) {
    SustainedGate gate(sustain);
    std::vector<bool> out;
    out.reserve(raw.size());
    for (const auto& d : raw) out.push_back(gate.update(d.t, d.raw));
    return out;
}

} // namespace etl
