#pragma once

// Potential-based reward shaping, look-ahead advice and look-back advice, and
// potentials estimated from a reward redistribution.

#include "rudder/core.hpp"
#include "rudder/lstm.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace rudder {

/// F = gamma phi(s') - phi(s).
inline double shaping_reward(double phi_s, double phi_next, double gamma = 1.0) noexcept {
    return gamma * phi_next - phi_s;
}

/// F = gamma Phi(s',a') - Phi(s,a).
inline double look_ahead_advice(double phi_sa, double phi_next_sa, double gamma = 1.0) noexcept {
    return gamma * phi_next_sa - phi_sa;
}

/// F = Phi(s,a) - Phi(s_prev,a_prev) / gamma.
inline double look_back_advice(double phi_prev_sa, double phi_sa, double gamma = 1.0) {
    if (gamma == 0.0) {
        throw ConfigError("look-back advice is undefined for gamma = 0");
    }
    return phi_sa - phi_prev_sa / gamma;
}

/// Constant c with sum_t F_t = 0 after replacing phi by phi - c, for
/// gamma < 1: c = (phi_0 - gamma^T phi_T) / (1 - gamma^T). With gamma = 1 no
/// constant works; use zero boundary potentials instead (see shaped_rewards).
inline double normalizing_constant(double phi_first, double phi_last, double gamma, std::size_t T) {
    if (!(gamma >= 0.0 && gamma < 1.0)) {
        throw ConfigError("normalizing constant needs gamma in [0, 1)");
    }
    const double gT = std::pow(gamma, static_cast<double>(T));
    return (phi_first - gT * phi_last) / (1.0 - gT);
}

enum class PotentialVariant { I, II, III };
enum class AdviceKind { RewardShaping, LookAhead, LookBack };

inline const char* to_string(PotentialVariant v) {
    return v == PotentialVariant::I ? "I" : v == PotentialVariant::II ? "II" : "III";
}

/// Potentials over states and state-action pairs, estimated by exponential
/// moving averages of redistribution quantities:
///   I   - the redistributed reward h_t
///   II  - the sum of the redistributed rewards from t on
///   III - the return prediction g_t
class Potential {
public:
    Potential(std::size_t states, std::size_t actions, PotentialVariant variant, double rate = 0.1)
        : actions_(actions), variant_(variant), rate_(rate), sa_(states * actions, 0.0), s_(states, 0.0) {}

    [[nodiscard]] PotentialVariant variant() const noexcept { return variant_; }
    [[nodiscard]] double state(StateId s) const { return s_[s]; }
    [[nodiscard]] double state_action(StateId s, ActionId a) const { return sa_[s * actions_ + a]; }
    [[nodiscard]] bool ready() const noexcept { return updates_ > 0; }

    void set(StateId s, ActionId a, double v) { sa_[s * actions_ + a] = v; }
    void set_state(StateId s, double v) { s_[s] = v; }

    /// Folds one episode: `h` redistributed rewards, `g` return predictions
    /// (both already in reward units).
    void observe(const EpisodeTrace& trace, std::span<const double> h, std::span<const double> g) {
        const std::size_t L = trace.size();
        double tail = 0.0;
        for (std::size_t t = L; t-- > 0;) {
            tail += h[t];
            double target = 0.0;
            switch (variant_) {
                case PotentialVariant::I: target = h[t]; break;
                case PotentialVariant::II: target = tail; break;
                case PotentialVariant::III: target = g[t]; break;
            }
            double& sa = sa_[trace.states[t] * actions_ + trace.actions[t]];
            sa += rate_ * (target - sa);
            double& st = s_[trace.states[t]];
            st += rate_ * (target - st);
        }
        ++updates_;
    }

private:
    std::size_t actions_;
    PotentialVariant variant_;
    double rate_;
    std::vector<double> sa_;
    std::vector<double> s_;
    std::size_t updates_ = 0;
};

/// Guard used when potentials come from a return predictor.
inline void require_trained(const ReturnPredictor& predictor) {
    if (!predictor.trained()) {
        throw NotReadyError("potentials need a trained return predictor");
    }
}

/// Shaping rewards F_0..F_{L-1} of a complete trace. Potentials beyond the
/// last step and before the first are 0 (a virtual initial and final state),
/// which makes every episode sum exactly zero for gamma = 1 when `normalize`
/// is set; otherwise the raw telescoping sum remains.
inline std::vector<double> shaped_rewards(const Potential& phi, AdviceKind kind, const EpisodeTrace& trace,
                                          bool normalize = true) {
    const std::size_t L = trace.size();
    std::vector<double> F(L, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        const StateId s = trace.states[t];
        const ActionId a = trace.actions[t];
        const bool last = t + 1 == L;
        switch (kind) {
            case AdviceKind::RewardShaping: {
                const double next = last ? 0.0 : phi.state(trace.states[t + 1]);
                F[t] = shaping_reward(phi.state(s), next);
                if (t == 0 && normalize) F[t] += phi.state(s);
                break;
            }
            case AdviceKind::LookAhead: {
                const double next = last ? 0.0 : phi.state_action(trace.states[t + 1], trace.actions[t + 1]);
                F[t] = look_ahead_advice(phi.state_action(s, a), next);
                if (t == 0 && normalize) F[t] += phi.state_action(s, a);
                break;
            }
            case AdviceKind::LookBack: {
                const double prev = t == 0 ? 0.0 : phi.state_action(trace.states[t - 1], trace.actions[t - 1]);
                F[t] = look_back_advice(prev, phi.state_action(s, a));
                if (last && normalize) F[t] -= phi.state_action(s, a);
                break;
            }
        }
    }
    return F;
}

}  // namespace rudder
