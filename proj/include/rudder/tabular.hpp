#pragma once

// Tabular value learning: the Q table with visit counts and eligibility
// traces, epsilon-greedy selection and the baseline update rules.
// gamma is 1 throughout; terminal successors bootstrap with 0.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

namespace rudder {

enum class TraceKind { Accumulating, Replacing };

class TabularQ {
public:
    TabularQ(std::size_t states, std::size_t actions, double alpha = 0.1, double lambda = 0.0,
             TraceKind kind = TraceKind::Accumulating)
        : states_(states), actions_(actions), alpha_(alpha), lambda_(lambda), kind_(kind),
          q_(states * actions, 0.0), n_(states * actions, 0), e_(states * actions, 0.0) {
        if (actions == 0) {
            throw ConfigError("Q table needs at least one action");
        }
        if (!(lambda >= 0.0 && lambda <= 1.0)) {
            throw ConfigError("lambda must lie in [0, 1]");
        }
    }

    [[nodiscard]] std::size_t state_count() const noexcept { return states_; }
    [[nodiscard]] std::size_t action_count() const noexcept { return actions_; }
    [[nodiscard]] double alpha() const noexcept { return alpha_; }
    [[nodiscard]] double lambda() const noexcept { return lambda_; }
    [[nodiscard]] TraceKind trace_kind() const noexcept { return kind_; }
    void set_alpha(double a) noexcept { alpha_ = a; }
    /// Sets every q to `v` (initial values).
    void fill(double v) { std::fill(q_.begin(), q_.end(), v); }

    [[nodiscard]] double& q(StateId s, ActionId a) { return q_[s * actions_ + a]; }
    [[nodiscard]] double q(StateId s, ActionId a) const { return q_[s * actions_ + a]; }
    [[nodiscard]] std::size_t& n(StateId s, ActionId a) { return n_[s * actions_ + a]; }
    [[nodiscard]] std::size_t n(StateId s, ActionId a) const { return n_[s * actions_ + a]; }
    [[nodiscard]] double e(StateId s, ActionId a) const { return e_[s * actions_ + a]; }

    [[nodiscard]] std::span<const double> row(StateId s) const { return {q_.data() + s * actions_, actions_}; }
    [[nodiscard]] std::span<double> row(StateId s) { return {q_.data() + s * actions_, actions_}; }

    [[nodiscard]] double max_q(StateId s) const {
        const auto r = row(s);
        return *std::max_element(r.begin(), r.end());
    }

    [[nodiscard]] const std::vector<double>& values() const noexcept { return q_; }

    /// Marks (s,a) as visited on the trace: +1 (accumulating) or = 1 (replacing).
    void visit(StateId s, ActionId a) {
        const std::size_t i = s * actions_ + a;
        if (e_[i] == 0.0) {
            active_.push_back(i);
        }
        e_[i] = kind_ == TraceKind::Accumulating ? e_[i] + 1.0 : 1.0;
    }

    /// q += alpha * delta * e over all live traces.
    void apply_traces(double delta) {
        const double step = alpha_ * delta;
        for (std::size_t i : active_) {
            q_[i] += step * e_[i];
        }
    }

    /// e *= factor; traces that underflow are dropped from the live set.
    void decay_traces(double factor) {
        if (factor == 0.0) {
            clear_traces();
            return;
        }
        std::size_t keep = 0;
        for (std::size_t i : active_) {
            e_[i] *= factor;
            if (e_[i] > 1e-300) {
                active_[keep++] = i;
            } else {
                e_[i] = 0.0;
            }
        }
        active_.resize(keep);
    }

    void clear_traces() {
        for (std::size_t i : active_) {
            e_[i] = 0.0;
        }
        active_.clear();
    }

    /// CSV with header `s,a,q,n`.
    void write_csv(std::ostream& os) const {
        const auto old = os.precision(std::numeric_limits<double>::max_digits10);
        os << "s,a,q,n\n";
        for (StateId s = 0; s < states_; ++s) {
            for (ActionId a = 0; a < actions_; ++a) {
                os << s << ',' << a << ',' << q(s, a) << ',' << n(s, a) << '\n';
            }
        }
        os.precision(old);
    }

private:
    std::size_t states_;
    std::size_t actions_;
    double alpha_;
    double lambda_;
    TraceKind kind_;
    std::vector<double> q_;
    std::vector<std::size_t> n_;
    std::vector<double> e_;
    std::vector<std::size_t> active_;
};

/// Argmax with uniform tie-break under `rng`.
inline ActionId greedy_action(std::span<const double> row, Rng& rng) {
    if (row.empty()) {
        throw ConfigError("cannot select from an empty action row");
    }
    const double best = *std::max_element(row.begin(), row.end());
    std::size_t ties = 0;
    for (double v : row) {
        ties += (v == best) ? 1 : 0;
    }
    std::size_t pick = 0;
    if (ties > 1) {
        pick = std::uniform_int_distribution<std::size_t>(0, ties - 1)(rng);
    }
    for (ActionId a = 0; a < row.size(); ++a) {
        if (row[a] == best && pick-- == 0) {
            return a;
        }
    }
    return 0;  // unreachable
}

inline bool is_greedy(std::span<const double> row, ActionId a) {
    return row[a] == *std::max_element(row.begin(), row.end());
}

inline ActionId epsilon_greedy(std::span<const double> row, double epsilon, Rng& rng) {
    if (row.empty()) {
        throw ConfigError("cannot select from an empty action row");
    }
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
        throw ConfigError("epsilon must lie in [0, 1]");
    }
    if (epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon) {
        return std::uniform_int_distribution<ActionId>(0, row.size() - 1)(rng);
    }
    return greedy_action(row, rng);
}

/// pi(a|s) of the epsilon-greedy policy over `row` (ties share the greedy mass).
inline double epsilon_greedy_prob(std::span<const double> row, double epsilon, ActionId a) {
    const double best = *std::max_element(row.begin(), row.end());
    std::size_t ties = 0;
    for (double v : row) {
        ties += (v == best) ? 1 : 0;
    }
    const double base = epsilon / static_cast<double>(row.size());
    return base + (row[a] == best ? (1.0 - epsilon) / static_cast<double>(ties) : 0.0);
}

// --- Monte Carlo -----------------------------------------------------------

/// q <- q - alpha (q - G_t) at every visited pair (constant-alpha MC).
inline void mc_update_constant_alpha(TabularQ& q, const EpisodeTrace& trace) {
    const auto g = tail_returns(trace.rewards);
    for (std::size_t t = 0; t < trace.size(); ++t) {
        double& v = q.q(trace.states[t], trace.actions[t]);
        v -= q.alpha() * (v - g[t]);
        ++q.n(trace.states[t], trace.actions[t]);
    }
}

/// Arithmetic mean of observed tail returns (policy evaluation).
inline void mc_update_mean(TabularQ& q, const EpisodeTrace& trace) {
    const auto g = tail_returns(trace.rewards);
    for (std::size_t t = 0; t < trace.size(); ++t) {
        const std::size_t k = ++q.n(trace.states[t], trace.actions[t]);
        double& v = q.q(trace.states[t], trace.actions[t]);
        v += (g[t] - v) / static_cast<double>(k);
    }
}

// --- one-step TD -------------------------------------------------------------

inline void q_learning_update(TabularQ& q, StateId s, ActionId a, double r, StateId next, bool terminal) {
    const double target = r + (terminal ? 0.0 : q.max_q(next));
    double& v = q.q(s, a);
    v += q.alpha() * (target - v);
    ++q.n(s, a);
}

inline void sarsa_update(TabularQ& q, StateId s, ActionId a, double r, StateId next, ActionId next_a, bool terminal) {
    const double target = r + (terminal ? 0.0 : q.q(next, next_a));
    double& v = q.q(s, a);
    v += q.alpha() * (target - v);
    ++q.n(s, a);
}

/// Target r + sum_a pi(a|s') q(s',a).
inline void expected_sarsa_update(TabularQ& q, StateId s, ActionId a, double r, StateId next,
                                  std::span<const double> next_policy, bool terminal) {
    double expect = 0.0;
    if (!terminal) {
        if (next_policy.size() != q.action_count()) {
            throw ConfigError("policy row does not match the action count");
        }
        for (ActionId b = 0; b < q.action_count(); ++b) {
            expect += next_policy[b] * q.q(next, b);
        }
    }
    double& v = q.q(s, a);
    v += q.alpha() * (r + expect - v);
    ++q.n(s, a);
}

// --- eligibility traces --------------------------------------------------------

/// SARSA(lambda): delta from (s,a,r,s',a'), trace on (s,a), all live pairs
/// updated, then traces decay by lambda.
inline void sarsa_lambda_update(TabularQ& q, StateId s, ActionId a, double r, StateId next, ActionId next_a,
                                bool terminal) {
    const double delta = r + (terminal ? 0.0 : q.q(next, next_a)) - q.q(s, a);
    q.visit(s, a);
    ++q.n(s, a);
    q.apply_traces(delta);
    if (terminal) {
        q.clear_traces();
    } else {
        q.decay_traces(q.lambda());
    }
}

/// Watkins Q(lambda). `next_a` is the action already chosen for s'; traces are
/// cut when it is not greedy. With `cut_on_exploration = false` this is the
/// naive Q(lambda).
inline void watkins_q_lambda_update(TabularQ& q, StateId s, ActionId a, double r, StateId next, ActionId next_a,
                                    bool terminal, bool cut_on_exploration = true) {
    const double delta = r + (terminal ? 0.0 : q.max_q(next)) - q.q(s, a);
    q.visit(s, a);
    ++q.n(s, a);
    q.apply_traces(delta);
    if (terminal) {
        q.clear_traces();
    } else if (cut_on_exploration && !is_greedy(q.row(next), next_a)) {
        q.clear_traces();
    } else {
        q.decay_traces(q.lambda());
    }
}

}  // namespace rudder
