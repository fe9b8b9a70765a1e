#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "etl/learning_trigger.hpp"
#include "etl/lti.hpp"
#include "etl/protocol.hpp"
#include "etl/stopping_time.hpp"
#include "etl/sysid.hpp"

namespace etl {

/// Change to the true plant at a given time; the prediction model is left stale.
struct DynamicsEvent {
    double time = 0.0;
    std::optional<Matrix> A;
    std::optional<Matrix> Sigma;
};

struct LearningConfig {
    ChirpReference chirp{1.0, 0.1, 10.0, 30.0};
    Eigen::Index samples = 3000;
};

struct RunConfig {
    double duration = 0.0;
    std::uint64_t seed = 1;
    std::string output;
};

struct ScenarioConfig {
    std::string name = "scenario";

    // truth
    Matrix A, B, Sigma, F;
    double Ts = 0.01;
    std::optional<Vector> x0;

    ModelEstimate initial_model;

    double delta = 0.02;
    TriggerConfig trigger;
    ReferenceSignal reference = ZeroReference{};
    LearningConfig learning;
    std::vector<DynamicsEvent> events;
    RunConfig run;

    LinearSystem system() const { return {A, B, Sigma, F, Ts}; }

    Vector initial_state() const { return x0.value_or(Vector::Zero(A.rows())); }

    /// Checks every block; errors name the offending field path.
    void validate() const;
};

namespace detail {

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& path) {
    if (m.rows() != rows || m.cols() != cols)
        throw ConfigError(path + ": expected a " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " matrix, got " + shape_of(m));
}

template <class F>
void with_path(const std::string& path, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

} // namespace detail

inline void ScenarioConfig::validate() const {
    if (A.rows() == 0 || A.rows() != A.cols())
        throw ConfigError("system.A: expected a square matrix, got " + shape_of(A));
    const auto n = A.rows();
    if (B.rows() != n || B.cols() == 0)
        throw ConfigError("system.B: expected " + std::to_string(n) + " rows, got " + shape_of(B));
    const auto q = B.cols();
    detail::require_shape(Sigma, n, n, "system.Sigma");
    detail::require_shape(F, q, n, "system.F");
    if (x0 && x0->size() != n) throw ConfigError("system.x0: expected " + std::to_string(n) + " entries");
    detail::with_path("system", [&] { (void)system(); });

    detail::require_shape(initial_model.A_cl, n, n, "model.A_cl");
    detail::require_shape(initial_model.B, n, q, "model.B");
    detail::require_shape(initial_model.Sigma, n, n, "model.Sigma");
    detail::with_path("model", [&] { initial_model.validate(); });

    if (!(delta > 0.0)) throw ConfigError("trigger.delta: must be positive");
    trigger.validate();
    if (std::llround(trigger.tau_max / Ts) < 1) throw ConfigError("trigger.tau_max: shorter than one sample");

    if (const auto* c = std::get_if<ChirpReference>(&reference)) detail::with_path("reference", [&] { etl::validate(*c); });
    detail::with_path("learning.chirp", [&] { etl::validate(learning.chirp); });
    if (learning.samples <= n + q)
        throw ConfigError("learning.samples: must exceed n + q = " + std::to_string(n + q));
    if (learning.chirp.duration + 1e-9 < static_cast<double>(learning.samples) * Ts)
        throw ConfigError("learning.chirp.duration: must cover learning.samples * Ts");

    if (!(run.duration >= 0.0) || !std::isfinite(run.duration)) throw ConfigError("run.duration: must be non-negative");
    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        const std::string path = "events[" + std::to_string(i) + "]";
        if (!(e.time > previous)) throw ConfigError(path + ".time: event times must be strictly increasing");
        if (e.time < 0.0 || e.time > run.duration) throw ConfigError(path + ".time: outside the run duration");
        if (!e.A && !e.Sigma) throw ConfigError(path + ": needs A or Sigma");
        if (e.A) detail::require_shape(*e.A, n, n, path + ".A");
        if (e.Sigma) detail::require_shape(*e.Sigma, n, n, path + ".Sigma");
        previous = e.time;
    }
    // Events must keep the closed loop stable; check them cumulatively.
    auto sys = system();
    for (std::size_t i = 0; i < events.size(); ++i) {
        detail::with_path("events[" + std::to_string(i) + "]", [&] {
            if (events[i].A) sys = sys.with_A(*events[i].A);
            if (events[i].Sigma) sys = sys.with_Sigma(*events[i].Sigma);
        });
    }
}

/// One row of the trace; empty optionals are written as empty CSV cells.
struct TraceRecord {
    double t = 0.0;
    std::optional<double> z_norm; ///< empty while a learning experiment runs
    bool gamma_state = false;
    std::optional<double> tau;
    std::optional<double> empirical_mean;
    std::optional<double> sim_mean;
    std::optional<double> kappa;
    std::optional<bool> gamma_learn_raw;
    bool gamma_learn = false;
    std::uint64_t model_version = 0;
    std::uint64_t messages = 0;
    std::uint64_t bytes = 0;
};

struct LearningEpisode {
    double start = 0.0;
    double end = 0.0;
    ModelEstimate model;     ///< fitted model; the stale one if the run ended first
    bool completed = false;
};

struct ScenarioTrace {
    double Ts = 0.0;
    std::vector<TraceRecord> records;
    std::vector<LearningEpisode> episodes;
    std::vector<CommEvent> events;
    std::vector<TauSample> taus;
};

/// Seed for the simulation-side estimate of a given model version.
inline std::uint64_t sim_seed(std::uint64_t run_seed, std::uint64_t version) {
    return run_seed ^ (0x9E3779B97F4A7C15ULL * (version + 1));
}

inline StoppingTimeEstimate model_stopping_time(const ModelEstimate& m, double Ts, double delta,
                                                const TriggerConfig& trig, std::uint64_t seed) {
    return mc_expected_stopping_time(DiscreteErrorModel{m.A_cl, m.Sigma, Ts}, delta, trig.M, trig.tau_max, seed);
}

namespace detail {

[[noreturn]] inline void rethrow_in_context(long k, const char* phase) {
    const std::string where = "step " + std::to_string(k) + " (" + phase + "): ";
    try {
        throw;
    } catch (const InsufficientExcitation& e) {
        throw InsufficientExcitation(where + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(where + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(where + e.what());
    } catch (const ProtocolError& e) {
        throw ProtocolError(where + e.what());
    } catch (const DecodeError& e) {
        throw ProtocolError(where + e.what());
    }
}

} // namespace detail

/**
 * @brief Runs the full estimation/learning loop described by `cfg`.
 *
 * Per step: apply due dynamics events to the truth, then either advance a
 * running learning experiment (ETSE suspended) or step the truth, run the
 * state trigger, feed tau samples into the window and evaluate the gated
 * learning trigger. A gated fire starts a learning experiment at the next
 * step; on completion the fitted model is broadcast, the window and gate are
 * reset and the simulation-side estimate is recomputed.
 */
inline ScenarioTrace run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const double Ts = cfg.Ts;
    const long total_steps = std::llround(cfg.run.duration / Ts);
    const long tau_max_steps = std::llround(cfg.trigger.tau_max / Ts);
    const auto& trig = cfg.trigger;

    LinearSystem sys = cfg.system();
    GaussianNoise noise(sys.Sigma());
    RngStream rng(cfg.run.seed);

    Vector x = cfg.initial_state();
    ModelEstimate model = cfg.initial_model;
    Sender sender(Predictor(model, x), Ts);
    Receiver receiver(Predictor(model, x));
    LosslessChannel channel;

    TauWindow window = TauWindow::from(trig);
    window.clear(0.0);
    SustainedGate gate(trig.sustain);
    StoppingTimeEstimate sim;
    try {
        sim = model_stopping_time(model, Ts, cfg.delta, trig, sim_seed(cfg.run.seed, model.version));
    } catch (...) {
        detail::rethrow_in_context(0, "model stopping time");
    }

    std::optional<LearningExperiment> learning;
    std::size_t next_event = 0;

    ScenarioTrace trace;
    trace.Ts = Ts;
    trace.records.reserve(static_cast<std::size_t>(std::max(0L, total_steps)));

    for (long k = 0; k < total_steps; ++k) {
        const double t_now = static_cast<double>(k) * Ts;
        const double t = static_cast<double>(k + 1) * Ts;

        while (next_event < cfg.events.size() && cfg.events[next_event].time <= t_now + 0.5 * Ts) {
            const auto& ev = cfg.events[next_event++];
            if (ev.A) sys = sys.with_A(*ev.A);
            if (ev.Sigma) {
                sys = sys.with_Sigma(*ev.Sigma);
                noise = GaussianNoise(sys.Sigma());
            }
        }

        TraceRecord rec;
        rec.t = t;

        if (learning) {
            try {
                const Vector r = Vector::Constant(sys.q(), learning->reference());
                Vector x_next = step(sys, x, r, noise(rng));
                learning->record(x, r, x_next);
                x = std::move(x_next);
                if (learning->done()) {
                    model = learning->fit(model.version);
                    auto ev = broadcast_model(model, sender, receiver, channel, x, k + 1);
                    trace.events.push_back(ev);
                    trace.episodes.back().end = t;
                    trace.episodes.back().model = model;
                    trace.episodes.back().completed = true;
                    learning.reset();
                    window.clear(t);
                    gate.reset();
                    sim = model_stopping_time(model, Ts, cfg.delta, trig, sim_seed(cfg.run.seed, model.version));
                }
            } catch (...) {
                detail::rethrow_in_context(k, "learning");
            }
        } else {
            try {
                const Vector r = eval_reference(cfg.reference, k, Ts, sys.q());
                x = step(sys, x, r, noise(rng));
                const auto out = protocol_step(sender, receiver, channel, x, r, cfg.delta, tau_max_steps);
                rec.z_norm = out.error_norm;
                if (out.event) {
                    rec.gamma_state = true;
                    trace.events.push_back(*out.event);
                }
                if (out.tau) {
                    rec.tau = out.tau->seconds;
                    trace.taus.push_back(*out.tau);
                    window.push(t, out.tau->seconds);
                }
                window.advance_to(t);

                const std::size_t effective_n = trig.window == WindowKind::Count ? trig.N : window.size();
                const double kappa = trig.threshold(std::max<std::size_t>(effective_n, 1));
                std::optional<bool> raw;
                if (trig.mode == TriggerMode::Exact) raw = evaluate_exact(window, sim.mean, kappa);
                else raw = evaluate_approx(window, sim, kappa);

                rec.gamma_learn_raw = raw;
                rec.gamma_learn = gate.update(t, raw);
                if (effective_n > 0) rec.kappa = kappa;
                if (rec.gamma_learn) {
                    learning.emplace(cfg.learning.chirp, cfg.learning.samples, Ts);
                    trace.episodes.push_back({t, t, model});
                }
            } catch (...) {
                detail::rethrow_in_context(k, "estimation");
            }
        }

        if (!window.empty()) rec.empirical_mean = window.mean();
        rec.sim_mean = sim.mean;
        rec.model_version = model.version;
        rec.messages = channel.messages();
        rec.bytes = channel.bytes();
        trace.records.push_back(rec);
    }
    if (learning) trace.episodes.back().end = static_cast<double>(total_steps) * Ts;
    return trace;
}

} // namespace etl
