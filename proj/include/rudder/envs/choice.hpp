#pragma once

// "The Choice": the first action picks the + or - side of a two-state chain;
// afterwards actions are ignored and the agent hops between the side's
// charged and neutral states. Every state after the first decision is
// charged with probability p_C, so the charged-visit count n over the T
// states s_1..s_T is Binomial(T, p_C). The only reward arrives with the last
// transition:
//
//   R_{T+1} = c0*C*n - c0*C*p_C*T + (b if a_0 = +),   c0 = +1 / -1 per side,
//
// whose expectation is p(a_0 = +) * b.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace rudder::envs {

struct ChoiceConfig {
    int horizon = 10;             ///< T, the delay between a_0 and the reward
    double charge_prob = 0.3;     ///< p_C
    double charge_unit = 2.0;     ///< C
    double bonus = 6.0;           ///< b
};

class Choice {
public:
    enum Side : ActionId { Plus = 0, Minus = 1 };

    explicit Choice(ChoiceConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.horizon < 1) {
            throw ConfigError("the choice needs a horizon of at least 1");
        }
        if (!(cfg_.charge_prob >= 0.0 && cfg_.charge_prob <= 1.0)) {
            throw ConfigError("charge probability must lie in [0, 1]");
        }
    }

    [[nodiscard]] const ChoiceConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t horizon() const noexcept { return static_cast<std::size_t>(cfg_.horizon); }

    /// Decisions a_0..a_T.
    [[nodiscard]] std::size_t length() const noexcept { return horizon() + 1; }
    [[nodiscard]] std::size_t action_count() const noexcept { return 2; }
    [[nodiscard]] std::size_t state_count() const noexcept { return 2 + horizon() * 4 * (horizon() + 1); }

    [[nodiscard]] StateId root() const noexcept { return 0; }
    [[nodiscard]] StateId final_state() const noexcept { return state_count() - 1; }

    struct Decoded {
        std::size_t t;
        Side side;
        bool charged;
        std::size_t n;  ///< charged visits so far, including this state
    };

    [[nodiscard]] StateId encode(std::size_t t, Side side, bool charged, std::size_t n) const noexcept {
        return 1 + (((t - 1) * 2 + side) * 2 + (charged ? 1 : 0)) * (horizon() + 1) + n;
    }

    /// Only valid for chain states (not the root or the final state).
    [[nodiscard]] Decoded decode(StateId s) const noexcept {
        std::size_t k = s - 1;
        const std::size_t n = k % (horizon() + 1);
        k /= horizon() + 1;
        const bool charged = (k % 2) == 1;
        k /= 2;
        const auto side = static_cast<Side>(k % 2);
        return {k / 2 + 1, side, charged, n};
    }

    [[nodiscard]] bool is_chain_state(StateId s) const noexcept { return s != root() && s != final_state(); }

    StateId reset(Rng& /*rng*/) const { return root(); }

    std::vector<std::pair<StateId, double>> initial_distribution() const { return {{root(), 1.0}}; }

    /// Terminal reward for a chain state at t = T.
    [[nodiscard]] double final_reward(Side side, std::size_t n) const noexcept {
        const double c0 = side == Plus ? 1.0 : -1.0;
        const double T = static_cast<double>(cfg_.horizon);
        return c0 * cfg_.charge_unit * static_cast<double>(n) - c0 * cfg_.charge_unit * cfg_.charge_prob * T +
               (side == Plus ? cfg_.bonus : 0.0);
    }

    Step step(StateId s, ActionId a, Rng& rng) const {
        if (a >= 2) {
            throw ConfigError("the choice action out of range");
        }
        std::bernoulli_distribution charge(cfg_.charge_prob);
        if (s == root()) {
            const bool c = charge(rng);
            return {encode(1, static_cast<Side>(a), c, c ? 1 : 0), 0.0, horizon() == 0};
        }
        const Decoded d = decode(s);
        if (d.t == horizon()) {
            return {final_state(), final_reward(d.side, d.n), true};
        }
        const bool c = charge(rng);
        return {encode(d.t + 1, d.side, c, d.n + (c ? 1 : 0)), 0.0, false};
    }

    std::vector<Outcome> outcomes(StateId s, ActionId a) const {
        if (a >= 2) {
            throw ConfigError("the choice action out of range");
        }
        const double p = cfg_.charge_prob;
        std::vector<Outcome> out;
        auto branch = [&](StateId next, double prob) {
            if (prob > 0.0) {
                out.push_back({next, 0.0, prob, false});
            }
        };
        if (s == root()) {
            const auto side = static_cast<Side>(a);
            branch(encode(1, side, true, 1), p);
            branch(encode(1, side, false, 0), 1.0 - p);
            return out;
        }
        const Decoded d = decode(s);
        if (d.t == horizon()) {
            return {{final_state(), final_reward(d.side, d.n), 1.0, true}};
        }
        branch(encode(d.t + 1, d.side, true, d.n + 1), p);
        branch(encode(d.t + 1, d.side, false, d.n), 1.0 - p);
        return out;
    }

    [[nodiscard]] double reward_scale() const noexcept {
        return cfg_.charge_unit * static_cast<double>(cfg_.horizon) + std::abs(cfg_.bonus);
    }

    // Delta encoding: a_t (2), a_{t-1} or none (3), side x charged of s_t (4).
    [[nodiscard]] std::size_t delta_dim() const noexcept { return 9; }

    void encode_delta(bool first, StateId /*ps*/, ActionId pa, StateId s, ActionId a, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        out[a] = 1.0;
        out[2 + (first ? 2 : pa)] = 1.0;
        if (is_chain_state(s)) {
            const Decoded d = decode(s);
            out[5 + d.side * 2 + (d.charged ? 0 : 1)] = 1.0;
        }
    }

private:
    ChoiceConfig cfg_;
};

}  // namespace rudder::envs
