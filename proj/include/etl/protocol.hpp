#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>

#include "etl/linalg.hpp"
#include "etl/wire.hpp"

namespace etl {

/// Prediction model shared by sender and receiver.
struct ModelEstimate {
    Matrix A_cl;
    Matrix B;
    Matrix Sigma;
    std::uint64_t version = 0;

    Eigen::Index n() const { return A_cl.rows(); }
    Eigen::Index q() const { return B.cols(); }

    void validate() const {
        const auto n = A_cl.rows();
        if (n == 0 || A_cl.cols() != n) throw ConfigError("model A_cl must be square, got " + shape_of(A_cl));
        if (B.rows() != n || B.cols() == 0) throw ConfigError("model B must be n x q, got " + shape_of(B));
        if (Sigma.rows() != n || Sigma.cols() != n) throw ConfigError("model Sigma must be n x n, got " + shape_of(Sigma));
        if (!A_cl.allFinite() || !B.allFinite() || !Sigma.allFinite()) throw ConfigError("model matrices must be finite");
        if (!is_psd(Sigma)) throw ConfigError("model Sigma must be symmetric positive semi-definite");
    }
};

inline wire::ModelUpdate to_wire(const ModelEstimate& m) { return {m.version, m.A_cl, m.B, m.Sigma}; }

inline ModelEstimate from_wire(const wire::ModelUpdate& m) { return {m.A_cl, m.B, m.Sigma, m.version}; }

/// One agent's copy of the model-based prediction x_hat(k).
class Predictor {
public:
    Predictor(ModelEstimate model, Vector x0) : model_(std::move(model)), x_hat_(std::move(x0)) {
        model_.validate();
        if (x_hat_.size() != model_.n()) throw ConfigError("initial state has wrong dimension");
    }

    const ModelEstimate& model() const { return model_; }
    const Vector& x_hat() const { return x_hat_; }
    long step() const { return k_; }

    void advance(const Vector& r);
    void reset(const Vector& x) { x_hat_ = x; }
    void reset(const Vector& x, long k) {
        x_hat_ = x;
        k_ = k;
    }

    void adopt(ModelEstimate m, const Vector& x) {
        m.validate();
        if (m.n() != model_.n() || m.q() != model_.q()) throw ConfigError("adopted model changes dimensions");
        model_ = std::move(m);
        x_hat_ = x;
    }

private:
    ModelEstimate model_;
    Vector x_hat_;
    long k_ = 0;
};

/// x_hat(k+1) = A_cl_hat x_hat(k) + B_hat r(k)
inline Vector predict(const Predictor& p, const Vector& r) {
    return p.model().A_cl * p.x_hat() + p.model().B * r;
}

inline void Predictor::advance(const Vector& r) {
    x_hat_ = predict(*this, r);
    ++k_;
}

/// Fires when the prediction error norm reaches delta (boundary included).
inline bool state_trigger(const Vector& x, const Vector& x_hat, double delta) {
    if (!(delta > 0.0)) throw ConfigError("delta must be positive");
    return (x - x_hat).norm() >= delta;
}

enum class PayloadKind { StateUpdate, ModelUpdate };
enum class Cause { Threshold, TauMaxForced };

struct CommEvent {
    long step = 0;
    PayloadKind kind = PayloadKind::StateUpdate;
    std::size_t bytes = 0;
    Cause cause = Cause::Threshold; ///< meaningful for state updates only
};

/// Inter-communication time observed at a state-update event.
struct TauSample {
    long steps = 0;
    double seconds = 0.0;
    Cause cause = Cause::Threshold;
};

class Receiver {
public:
    explicit Receiver(Predictor p) : pred_(std::move(p)) {}

    void on_message(std::span<const std::uint8_t> bytes) {
        auto msg = wire::decode_message(bytes);
        if (auto* s = std::get_if<wire::StateUpdate>(&msg)) {
            if (s->x.size() != pred_.model().n()) throw ProtocolError("state-update has wrong dimension");
            pred_.reset(s->x, static_cast<long>(s->step));
        } else {
            auto& m = std::get<wire::ModelUpdate>(msg);
            // The model swap is followed by a state-update that synchronizes x_hat.
            pred_.adopt(from_wire(m), pred_.x_hat());
        }
    }

    Predictor& predictor() { return pred_; }
    const Predictor& predictor() const { return pred_; }

private:
    Predictor pred_;
};

/// Synchronous in-memory transport with message and byte accounting.
class LosslessChannel {
public:
    void send(const wire::Bytes& bytes, Receiver& to) {
        ++messages_;
        bytes_ += bytes.size();
        to.on_message(bytes);
    }

    std::uint64_t messages() const { return messages_; }
    std::uint64_t bytes() const { return bytes_; }

private:
    std::uint64_t messages_ = 0;
    std::uint64_t bytes_ = 0;
};

class Sender {
public:
    Sender(Predictor p, double Ts) : pred_(std::move(p)), Ts_(Ts) {
        if (!(Ts_ > 0.0)) throw ConfigError("sample time must be positive");
    }

    Predictor& predictor() { return pred_; }
    const Predictor& predictor() const { return pred_; }
    double Ts() const { return Ts_; }
    long steps_since_communication() const { return since_; }

private:
    friend struct ProtocolAccess;
    Predictor pred_;
    double Ts_;
    long since_ = 0;
};

struct StepOutcome {
    double error_norm = 0.0; ///< ||x - x_hat|| before any reset
    std::optional<CommEvent> event;
    std::optional<TauSample> tau;
};

struct ProtocolAccess {
    static long& since(Sender& s) { return s.since_; }
};

inline void check_lockstep(const Sender& s, const Receiver& r) {
    const auto& a = s.predictor().x_hat();
    const auto& b = r.predictor().x_hat();
    if (a.size() != b.size() || (a - b).cwiseAbs().maxCoeff() > 1e-12)
        throw ProtocolError("sender and receiver predictions diverged at step " + std::to_string(s.predictor().step()));
}

/**
 * @brief Advance both agents by one step and run the state trigger.
 *
 * `x_true` is x(k+1) and `r` is r(k). A state-update is sent when the error
 * norm reaches delta or when tau_max_steps steps have passed since the last
 * communication; the latter is reported as TauMaxForced even if the
 * threshold was crossed at the same step, so tau == tau_max always carries
 * the forced cause.
 */
inline StepOutcome protocol_step(Sender& sender, Receiver& receiver, LosslessChannel& channel, const Vector& x_true,
                                 const Vector& r, double delta, long tau_max_steps) {
    if (tau_max_steps < 1) throw ConfigError("tau_max must span at least one step");
    sender.predictor().advance(r);
    receiver.predictor().advance(r);
    check_lockstep(sender, receiver);

    long& since = ProtocolAccess::since(sender);
    ++since;

    StepOutcome out;
    out.error_norm = (x_true - sender.predictor().x_hat()).norm();
    const bool forced = since >= tau_max_steps;
    if (!state_trigger(x_true, sender.predictor().x_hat(), delta) && !forced) return out;

    const Cause cause = forced ? Cause::TauMaxForced : Cause::Threshold;
    const auto bytes =
        wire::encode_message(wire::StateUpdate{static_cast<std::uint64_t>(sender.predictor().step()), x_true});
    channel.send(bytes, receiver);
    sender.predictor().reset(x_true);
    check_lockstep(sender, receiver);

    out.event = CommEvent{sender.predictor().step(), PayloadKind::StateUpdate, bytes.size(), cause};
    out.tau = TauSample{since, static_cast<double>(since) * sender.Ts(), cause};
    since = 0;
    return out;
}

/**
 * @brief Share a new model with the receiver and resynchronize both predictions.
 *
 * Sends the model-update followed by a state-update carrying x_true; the
 * returned event accounts for both messages. `step` is the adoption step;
 * both predictors continue counting from it. Versions may repeat (idempotent
 * rebroadcast) but never decrease.
 */
inline CommEvent broadcast_model(const ModelEstimate& model, Sender& sender, Receiver& receiver,
                                 LosslessChannel& channel, const Vector& x_true, long step) {
    model.validate();
    if (model.version < sender.predictor().model().version)
        throw ProtocolError("model version must not decrease");
    const auto model_bytes = wire::encode_message(to_wire(model));
    channel.send(model_bytes, receiver);
    sender.predictor().adopt(model, x_true);
    sender.predictor().reset(x_true, step);

    const auto sync_bytes =
        wire::encode_message(wire::StateUpdate{static_cast<std::uint64_t>(sender.predictor().step()), x_true});
    channel.send(sync_bytes, receiver);
    check_lockstep(sender, receiver);
    ProtocolAccess::since(sender) = 0;

    return CommEvent{sender.predictor().step(), PayloadKind::ModelUpdate, model_bytes.size() + sync_bytes.size(),
                     Cause::Threshold};
}

} // namespace etl
