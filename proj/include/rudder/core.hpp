#pragma once

// Finite-horizon decision process abstraction: environments, episode traces,
// tabular policies, returns and the immediate -> delayed reward transform.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rudder {

using StateId = std::size_t;
using ActionId = std::size_t;

/// All randomness flows through an explicitly seeded generator.
using Rng = std::mt19937_64;

/// Raised for malformed configuration: bad policy rows, shape mismatches,
/// invalid method/task pairings and similar caller errors.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation needs state that has not been produced yet
/// (e.g. potentials from an untrained predictor).
class NotReadyError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised when an oracle is asked for something it cannot do
/// (non-enumerable model, trajectory budget exceeded, ...).
class UnsupportedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Step {
    StateId next = 0;
    double reward = 0.0;
    bool done = false;
};

/// One branch of an enumerable transition-reward kernel p(s', r | s, a).
struct Outcome {
    StateId next = 0;
    double reward = 0.0;
    double probability = 0.0;
    bool done = false;
};

// An environment is an immutable config plus pure step functions over
// (state, rng). Every episode has exactly length() decisions, i.e. T+1 for
// a horizon-T process; time is encoded in the state.
template <class E>
concept Environment = requires(const E& env, StateId s, ActionId a, Rng& rng) {
    { env.length() } -> std::convertible_to<std::size_t>;
    { env.state_count() } -> std::convertible_to<std::size_t>;
    { env.action_count() } -> std::convertible_to<std::size_t>;
    { env.reset(rng) } -> std::same_as<StateId>;
    { env.step(s, a, rng) } -> std::same_as<Step>;
};

// Environments that expose their full model, usable by the exact oracles.
template <class E>
concept EnumerableEnvironment =
    Environment<E> && requires(const E& env, StateId s, ActionId a) {
        { env.initial_distribution() } -> std::same_as<std::vector<std::pair<StateId, double>>>;
        { env.outcomes(s, a) } -> std::same_as<std::vector<Outcome>>;
    };

// Environments with a per-step difference encoding for the return predictor.
// `prev_state`/`prev_action` are ignored when `first` is true.
template <class E>
concept DeltaEncodedEnvironment =
    Environment<E> && requires(const E& env, StateId s, ActionId a, bool first, std::span<double> out) {
        { env.delta_dim() } -> std::convertible_to<std::size_t>;
        env.encode_delta(first, s, a, s, a, out);
    };

/// Ordered record of one finite-horizon rollout. Index t holds s_t, a_t and
/// the reward r_{t+1} that followed a_t.
struct EpisodeTrace {
    std::vector<StateId> states;
    std::vector<ActionId> actions;
    std::vector<double> rewards;
    std::vector<bool> dones;

    [[nodiscard]] std::size_t size() const noexcept { return actions.size(); }
    [[nodiscard]] bool empty() const noexcept { return actions.empty(); }

    void reserve(std::size_t n) {
        states.reserve(n);
        actions.reserve(n);
        rewards.reserve(n);
        dones.reserve(n);
    }

    void clear() noexcept {
        states.clear();
        actions.clear();
        rewards.clear();
        dones.clear();
    }

    void push(StateId s, ActionId a, double r, bool done) {
        states.push_back(s);
        actions.push_back(a);
        rewards.push_back(r);
        dones.push_back(done);
    }

    /// Lengths agree, only the final step is terminal and it is terminal.
    [[nodiscard]] bool consistent() const noexcept {
        const std::size_t n = actions.size();
        if (states.size() != n || rewards.size() != n || dones.size() != n || n == 0) {
            return false;
        }
        for (std::size_t t = 0; t + 1 < n; ++t) {
            if (dones[t]) {
                return false;
            }
        }
        return dones.back();
    }
};

/// Tabular stochastic Markov policy pi(a|s). Rows are validated on construction.
class TabularPolicy {
public:
    static constexpr double kRowTolerance = 1e-12;

    TabularPolicy(std::size_t states, std::size_t actions, std::vector<double> probs)
        : states_(states), actions_(actions), probs_(std::move(probs)) {
        if (actions_ == 0) {
            throw ConfigError("policy needs at least one action");
        }
        if (probs_.size() != states_ * actions_) {
            throw ConfigError("policy table has wrong size");
        }
        for (std::size_t s = 0; s < states_; ++s) {
            check_row(s);
        }
    }

    static TabularPolicy uniform(std::size_t states, std::size_t actions) {
        return TabularPolicy(states, actions,
                             std::vector<double>(states * actions, 1.0 / static_cast<double>(actions)));
    }

    /// Deterministic policy from a per-state action choice.
    static TabularPolicy deterministic(std::size_t actions, std::span<const ActionId> choice) {
        std::vector<double> p(choice.size() * actions, 0.0);
        for (std::size_t s = 0; s < choice.size(); ++s) {
            if (choice[s] >= actions) {
                throw ConfigError("deterministic policy action out of range");
            }
            p[s * actions + choice[s]] = 1.0;
        }
        return TabularPolicy(choice.size(), actions, std::move(p));
    }

    /// Mixes a deterministic choice with uniform exploration of weight epsilon.
    static TabularPolicy epsilon_greedy(std::size_t actions, std::span<const ActionId> choice, double epsilon) {
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
            throw ConfigError("epsilon must lie in [0, 1]");
        }
        const double base = epsilon / static_cast<double>(actions);
        std::vector<double> p(choice.size() * actions, base);
        for (std::size_t s = 0; s < choice.size(); ++s) {
            if (choice[s] >= actions) {
                throw ConfigError("greedy action out of range");
            }
            p[s * actions + choice[s]] += 1.0 - epsilon;
        }
        return TabularPolicy(choice.size(), actions, std::move(p));
    }

    [[nodiscard]] std::size_t state_count() const noexcept { return states_; }
    [[nodiscard]] std::size_t action_count() const noexcept { return actions_; }

    [[nodiscard]] double prob(StateId s, ActionId a) const { return probs_[s * actions_ + a]; }

    [[nodiscard]] std::span<const double> row(StateId s) const {
        return {probs_.data() + s * actions_, actions_};
    }

    ActionId sample(StateId s, Rng& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double x = u(rng);
        const auto r = row(s);
        for (std::size_t a = 0; a + 1 < r.size(); ++a) {
            if (x < r[a]) {
                return a;
            }
            x -= r[a];
        }
        return r.size() - 1;
    }

    void check_row(StateId s) const {
        double sum = 0.0;
        for (double p : row(s)) {
            if (!(p >= 0.0)) {
                throw ConfigError("policy row " + std::to_string(s) + " has a negative entry");
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > kRowTolerance) {
            throw ConfigError("policy row " + std::to_string(s) + " is not normalized");
        }
    }

private:
    std::size_t states_;
    std::size_t actions_;
    std::vector<double> probs_;
};

/// Samples one episode with an arbitrary action selector `choose(s, rng)`.
template <Environment Env, class Chooser>
    requires std::invocable<Chooser&, StateId, Rng&>
EpisodeTrace sample_episode(const Env& env, Chooser&& choose, Rng& rng) {
    EpisodeTrace trace;
    trace.reserve(env.length());
    StateId s = env.reset(rng);
    for (std::size_t t = 0; t < env.length(); ++t) {
        const ActionId a = choose(s, rng);
        const Step st = env.step(s, a, rng);
        const bool done = (t + 1 == env.length());
        if (st.done != done) {
            throw std::logic_error("environment terminated off its horizon");
        }
        trace.push(s, a, st.reward, done);
        s = st.next;
    }
    return trace;
}

template <Environment Env>
EpisodeTrace sample_episode(const Env& env, const TabularPolicy& policy, Rng& rng) {
    if (policy.state_count() != env.state_count() || policy.action_count() != env.action_count()) {
        throw ConfigError("policy dimensions do not match the environment");
    }
    return sample_episode(
        env,
        [&policy](StateId s, Rng& r) {
            policy.check_row(s);
            return policy.sample(s, r);
        },
        rng);
}

/// Undiscounted return: left-to-right sum of r_1..r_{T+1}.
inline double episode_return(std::span<const double> rewards) noexcept {
    double g = 0.0;
    for (double r : rewards) {
        g += r;
    }
    return g;
}

inline double episode_return(const EpisodeTrace& trace) noexcept { return episode_return(trace.rewards); }

/// Tail returns G_t = sum_{k>=t} r_{k+1}.
inline std::vector<double> tail_returns(std::span<const double> rewards) {
    std::vector<double> g(rewards.size(), 0.0);
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc += rewards[i];
        g[i] = acc;
    }
    return g;
}

/// Writes the trace as CSV rows `trial_id,episode,t,s,a,r`. The header is
/// emitted separately with write_trace_header().
inline void write_trace_header(std::ostream& os) { os << "trial_id,episode,t,s,a,r\n"; }

inline void write_trace_rows(std::ostream& os, const EpisodeTrace& trace, std::size_t trial, std::size_t episode) {
    const auto old_prec = os.precision(std::numeric_limits<double>::max_digits10);
    for (std::size_t t = 0; t < trace.size(); ++t) {
        os << trial << ',' << episode << ',' << t << ',' << trace.states[t] << ',' << trace.actions[t] << ','
           << trace.rewards[t] << '\n';
    }
    os.precision(old_prec);
}

// ---------------------------------------------------------------------------
// Immediate -> delayed reward transform.
//
// The wrapped state is (inner state, rho) with rho the reward accumulated so
// far, kept as an exact integer count of `quantum` so the wrapped process
// stays Markov with a finite state set. All accumulated reward is paid with
// the final transition; every earlier reward is 0.
// ---------------------------------------------------------------------------

/// Default split: the whole reward is delayed.
struct DelayAll {
    double operator()(StateId /*s*/, ActionId /*a*/, const Step& step) const noexcept { return step.reward; }
};

template <Environment Inner, class Split = DelayAll>
class DelayedRewardEnv {
public:
    /// `quantum` is the reward resolution (every delayed reward must be an
    /// integer multiple of it), `[rho_min, rho_max]` bounds the accumulated
    /// delayed reward.
    DelayedRewardEnv(Inner inner, double quantum, double rho_min, double rho_max, Split split = {})
        : inner_(std::move(inner)), split_(std::move(split)), quantum_(quantum) {
        if (!(quantum_ > 0.0) || !(rho_max >= rho_min)) {
            throw ConfigError("delay wrapper needs a positive quantum and a valid accumulator range");
        }
        min_units_ = to_units(rho_min);
        const std::int64_t max_units = to_units(rho_max);
        levels_ = static_cast<std::size_t>(max_units - min_units_ + 1);
    }

    [[nodiscard]] const Inner& inner() const noexcept { return inner_; }
    [[nodiscard]] std::size_t length() const { return inner_.length(); }
    [[nodiscard]] std::size_t action_count() const { return inner_.action_count(); }
    [[nodiscard]] std::size_t state_count() const { return inner_.state_count() * levels_; }

    [[nodiscard]] double reward_scale() const
        requires requires(const Inner& e) { e.reward_scale(); }
    {
        return inner_.reward_scale();
    }

    [[nodiscard]] StateId encode(StateId inner_state, std::int64_t rho_units) const {
        if (rho_units < min_units_ || rho_units - min_units_ >= static_cast<std::int64_t>(levels_)) {
            throw std::out_of_range("accumulated reward outside the configured range");
        }
        return inner_state * levels_ + static_cast<std::size_t>(rho_units - min_units_);
    }

    [[nodiscard]] StateId inner_state(StateId s) const noexcept { return s / levels_; }

    [[nodiscard]] std::int64_t rho_units(StateId s) const noexcept {
        return static_cast<std::int64_t>(s % levels_) + min_units_;
    }

    [[nodiscard]] double rho(StateId s) const noexcept { return static_cast<double>(rho_units(s)) * quantum_; }

    StateId reset(Rng& rng) const { return encode(inner_.reset(rng), 0); }

    Step step(StateId s, ActionId a, Rng& rng) const {
        const StateId is = inner_state(s);
        const Step st = inner_.step(is, a, rng);
        return wrap(s, is, a, st);
    }

    std::vector<std::pair<StateId, double>> initial_distribution() const
        requires EnumerableEnvironment<Inner>
    {
        auto init = inner_.initial_distribution();
        for (auto& [s, p] : init) {
            s = encode(s, 0);
        }
        return init;
    }

    std::vector<Outcome> outcomes(StateId s, ActionId a) const
        requires EnumerableEnvironment<Inner>
    {
        const StateId is = inner_state(s);
        std::vector<Outcome> out = inner_.outcomes(is, a);
        for (auto& o : out) {
            const Step w = wrap(s, is, a, Step{o.next, o.reward, o.done});
            o.next = w.next;
            o.reward = w.reward;
        }
        return out;
    }

    [[nodiscard]] std::size_t delta_dim() const
        requires DeltaEncodedEnvironment<Inner>
    {
        return inner_.delta_dim();
    }

    void encode_delta(bool first, StateId ps, ActionId pa, StateId s, ActionId a, std::span<double> out) const
        requires DeltaEncodedEnvironment<Inner>
    {
        inner_.encode_delta(first, inner_state(ps), pa, inner_state(s), a, out);
    }

private:
    std::int64_t to_units(double value) const {
        const double u = value / quantum_;
        const double r = std::round(u);
        if (std::abs(u - r) > 1e-6) {
            throw ConfigError("reward " + std::to_string(value) + " is not a multiple of the wrapper quantum");
        }
        return static_cast<std::int64_t>(r);
    }

    Step wrap(StateId s, StateId /*is*/, ActionId a, const Step& st) const {
        const double delayed = split_(inner_state(s), a, st);
        const double kept = st.reward - delayed;
        const std::int64_t acc = rho_units(s) + to_units(delayed);
        if (st.done) {
            // Terminal successor keeps rho at 0; the layer after T is never decided on.
            return Step{encode(st.next, 0), kept + static_cast<double>(acc) * quantum_, true};
        }
        return Step{encode(st.next, acc), kept, false};
    }

    Inner inner_;
    Split split_;
    double quantum_;
    std::int64_t min_units_ = 0;
    std::size_t levels_ = 1;
};

/// Wraps `env` so that all (or the `split` part of the) reward is paid at
/// sequence end, carrying the accumulated amount in the state.
template <Environment Inner, class Split = DelayAll>
DelayedRewardEnv<Inner, Split> delay_wrapper(Inner env, double quantum, double rho_min, double rho_max,
                                             Split split = {}) {
    return DelayedRewardEnv<Inner, Split>(std::move(env), quantum, rho_min, rho_max, std::move(split));
}

}  // namespace rudder
