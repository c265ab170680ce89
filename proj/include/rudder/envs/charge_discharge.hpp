#pragma once

// Charge-Discharge: two base states (C)harged / (D)ischarged, two actions
// (c)harge / (d)ischarge. Action c leads to C, d leads to D. Discharging in D
// pays 1 immediately; discharging in C is worth 10, but that part is
// accumulated and only paid with the final transition.
//
// ChargeDischarge is the immediate form; charge_discharge() builds the task
// by passing it through the delay wrapper with a split that defers the 10s.

#include "rudder/core.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace rudder::envs {

struct ChargeDischargeConfig {
    int horizon = 4;
    double small = 1.0;
    double large = 10.0;
};

class ChargeDischarge {
public:
    enum Base : std::size_t { Charged = 0, Discharged = 1 };
    enum Action : ActionId { Charge = 0, Discharge = 1 };

    explicit ChargeDischarge(ChargeDischargeConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.horizon < 1) {
            throw ConfigError("charge-discharge needs a horizon of at least 1");
        }
    }

    [[nodiscard]] const ChargeDischargeConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t length() const noexcept { return static_cast<std::size_t>(cfg_.horizon); }
    [[nodiscard]] std::size_t action_count() const noexcept { return 2; }
    [[nodiscard]] std::size_t state_count() const noexcept { return (length() + 1) * 2; }

    [[nodiscard]] static StateId encode(std::size_t t, Base b) noexcept { return t * 2 + b; }
    [[nodiscard]] static std::size_t time(StateId s) noexcept { return s / 2; }
    [[nodiscard]] static Base base(StateId s) noexcept { return static_cast<Base>(s % 2); }

    StateId reset(Rng& /*rng*/) const { return encode(0, Discharged); }

    std::vector<std::pair<StateId, double>> initial_distribution() const { return {{encode(0, Discharged), 1.0}}; }

    [[nodiscard]] double reward(StateId s, ActionId a) const noexcept {
        if (a != Discharge) {
            return 0.0;
        }
        return base(s) == Charged ? cfg_.large : cfg_.small;
    }

    Step step(StateId s, ActionId a, Rng& /*rng*/) const {
        check_action(a);
        const std::size_t t = time(s);
        return {encode(t + 1, a == Charge ? Charged : Discharged), reward(s, a), t + 1 == length()};
    }

    std::vector<Outcome> outcomes(StateId s, ActionId a) const {
        Rng unused;
        const Step st = step(s, a, unused);
        return {{st.next, st.reward, 1.0, st.done}};
    }

    [[nodiscard]] double reward_scale() const noexcept { return cfg_.large * static_cast<double>((length() + 1) / 2); }

    // Delta encoding: a_t (2), a_{t-1} or none (3), base state of s_t (2).
    [[nodiscard]] std::size_t delta_dim() const noexcept { return 7; }

    void encode_delta(bool first, StateId /*ps*/, ActionId pa, StateId s, ActionId a, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        out[a] = 1.0;
        out[2 + (first ? 2 : pa)] = 1.0;
        out[5 + base(s)] = 1.0;
    }

private:
    static void check_action(ActionId a) {
        if (a >= 2) {
            throw ConfigError("charge-discharge action out of range");
        }
    }

    ChargeDischargeConfig cfg_;
};

/// Defers exactly the large discharge reward.
struct DeferLargeDischarge {
    double large = 10.0;
    double operator()(StateId s, ActionId a, const Step& /*step*/) const noexcept {
        return (ChargeDischarge::base(s) == ChargeDischarge::Charged && a == ChargeDischarge::Discharge) ? large : 0.0;
    }
};

using DelayedChargeDischarge = DelayedRewardEnv<ChargeDischarge, DeferLargeDischarge>;

/// The task proper: large rewards accumulated and paid at sequence end.
inline DelayedChargeDischarge charge_discharge(ChargeDischargeConfig cfg = {}) {
    const double cap = cfg.large * static_cast<double>((cfg.horizon + 1) / 2);
    return delay_wrapper(ChargeDischarge(cfg), cfg.large, 0.0, cap, DeferLargeDischarge{cfg.large});
}

}  // namespace rudder::envs
