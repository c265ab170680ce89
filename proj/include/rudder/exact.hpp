#pragma once

// Exact oracles on enumerable environments: backward induction (optimal or
// policy evaluation), an independent brute-force tree enumeration, exact
// evaluation of a fixed policy by forward propagation, and the backward
// variance recursion of the return.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

namespace rudder {

/// pi(a|s) as a callable; an empty optional means "optimal".
using PolicyFn = std::function<double(StateId, ActionId)>;

inline PolicyFn as_policy_fn(const TabularPolicy& p) {
    return [&p](StateId s, ActionId a) { return p.prob(s, a); };
}

inline PolicyFn uniform_policy_fn(std::size_t actions) {
    return [actions](StateId, ActionId) { return 1.0 / static_cast<double>(actions); };
}

struct ExactQ {
    enum class Source { BackwardInduction, BruteForce };

    std::size_t states = 0;
    std::size_t actions = 0;
    std::vector<double> q;        ///< q(s,a), NaN where unreachable
    std::vector<double> v;        ///< v(s), NaN where unreachable
    std::vector<char> reachable;  ///< per state
    Source source = Source::BackwardInduction;

    [[nodiscard]] double at(StateId s, ActionId a) const { return q[s * actions + a]; }
    [[nodiscard]] bool is_reachable(StateId s) const { return reachable[s] != 0; }

    /// Expected return from the initial distribution.
    double initial_value = 0.0;
};

/// Non-terminal states reachable from the initial distribution (any action).
template <EnumerableEnvironment Env>
std::vector<char> reachable_states(const Env& env) {
    std::vector<char> seen(env.state_count(), 0);
    std::vector<StateId> stack;
    for (const auto& [s, p] : env.initial_distribution()) {
        if (p > 0.0 && !seen[s]) {
            seen[s] = 1;
            stack.push_back(s);
        }
    }
    while (!stack.empty()) {
        const StateId s = stack.back();
        stack.pop_back();
        for (ActionId a = 0; a < env.action_count(); ++a) {
            for (const auto& o : env.outcomes(s, a)) {
                if (!o.done && o.probability > 0.0 && !seen[o.next]) {
                    seen[o.next] = 1;
                    stack.push_back(o.next);
                }
            }
        }
    }
    return seen;
}

namespace detail {

template <EnumerableEnvironment Env>
class Inductor {
public:
    Inductor(const Env& env, const std::optional<PolicyFn>& policy) : env_(env), policy_(policy) {
        out_.states = env.state_count();
        out_.actions = env.action_count();
        out_.q.assign(out_.states * out_.actions, std::numeric_limits<double>::quiet_NaN());
        out_.v.assign(out_.states, std::numeric_limits<double>::quiet_NaN());
        out_.reachable.assign(out_.states, 0);
    }

    double value(StateId s) {
        if (out_.reachable[s]) {
            return out_.v[s];
        }
        const std::size_t A = out_.actions;
        double best = -std::numeric_limits<double>::infinity();
        double avg = 0.0;
        for (ActionId a = 0; a < A; ++a) {
            double q = 0.0;
            for (const auto& o : env_.outcomes(s, a)) {
                if (o.probability == 0.0) {
                    continue;
                }
                q += o.probability * (o.reward + (o.done ? 0.0 : value(o.next)));
            }
            out_.q[s * A + a] = q;
            best = std::max(best, q);
            if (policy_) {
                avg += (*policy_)(s, a) * q;
            }
        }
        out_.reachable[s] = 1;
        out_.v[s] = policy_ ? avg : best;
        return out_.v[s];
    }

    ExactQ finish() {
        double init = 0.0;
        for (const auto& [s, p] : env_.initial_distribution()) {
            if (p > 0.0) {
                init += p * value(s);
            }
        }
        out_.initial_value = init;
        return std::move(out_);
    }

private:
    const Env& env_;
    const std::optional<PolicyFn>& policy_;
    ExactQ out_;
};

}  // namespace detail

/// Dynamic programming from the horizon backwards (memoised over states, q = 0
/// beyond the final transition). Optimal when `policy` is empty, otherwise
/// policy evaluation.
template <EnumerableEnvironment Env>
ExactQ backward_induction(const Env& env, const std::optional<PolicyFn>& policy = std::nullopt) {
    detail::Inductor<Env> ind(env, policy);
    return ind.finish();
}

/// Independent oracle: expands the full trajectory tree below every reachable
/// (s, a) without sharing sub-results. Throws UnsupportedError once more than
/// `budget` tree nodes would be visited.
template <EnumerableEnvironment Env>
ExactQ brute_force_q(const Env& env, const std::optional<PolicyFn>& policy = std::nullopt,
                     std::size_t budget = 1'000'000) {
    const std::size_t A = env.action_count();
    std::size_t visited = 0;

    std::function<double(StateId, ActionId)> q_of;
    std::function<double(StateId)> v_of = [&](StateId s) {
        double best = -std::numeric_limits<double>::infinity();
        double avg = 0.0;
        for (ActionId a = 0; a < A; ++a) {
            const double pa = policy ? (*policy)(s, a) : 1.0;
            if (policy && pa == 0.0) {
                continue;
            }
            const double q = q_of(s, a);
            best = std::max(best, q);
            avg += pa * q;
        }
        return policy ? avg : best;
    };
    q_of = [&](StateId s, ActionId a) {
        if (++visited > budget) {
            throw UnsupportedError("brute-force enumeration exceeds its trajectory budget");
        }
        double q = 0.0;
        for (const auto& o : env.outcomes(s, a)) {
            if (o.probability == 0.0) {
                continue;
            }
            q += o.probability * (o.reward + (o.done ? 0.0 : v_of(o.next)));
        }
        return q;
    };

    ExactQ out;
    out.states = env.state_count();
    out.actions = A;
    out.source = ExactQ::Source::BruteForce;
    out.q.assign(out.states * A, std::numeric_limits<double>::quiet_NaN());
    out.v.assign(out.states, std::numeric_limits<double>::quiet_NaN());
    out.reachable = reachable_states(env);
    for (StateId s = 0; s < out.states; ++s) {
        if (!out.reachable[s]) {
            continue;
        }
        for (ActionId a = 0; a < A; ++a) {
            out.q[s * A + a] = q_of(s, a);
        }
        out.v[s] = v_of(s);
    }
    double init = 0.0;
    for (const auto& [s, p] : env.initial_distribution()) {
        init += p * out.v[s];
    }
    out.initial_value = init;
    return out;
}

/// Largest |q - (E[r] + E[v(s')])| over reachable (s, a).
template <EnumerableEnvironment Env>
double bellman_residual(const Env& env, const ExactQ& ex) {
    double worst = 0.0;
    for (StateId s = 0; s < ex.states; ++s) {
        if (!ex.is_reachable(s)) {
            continue;
        }
        for (ActionId a = 0; a < ex.actions; ++a) {
            double target = 0.0;
            for (const auto& o : env.outcomes(s, a)) {
                target += o.probability * (o.reward + (o.done ? 0.0 : ex.v[o.next]));
            }
            worst = std::max(worst, std::abs(ex.at(s, a) - target));
        }
    }
    return worst;
}

/// Expected return of a policy by forward propagation of the state
/// distribution layer by layer. Only states the policy reaches are touched.
template <EnumerableEnvironment Env>
double evaluate_policy(const Env& env, const PolicyFn& policy) {
    std::unordered_map<StateId, double> dist;
    for (const auto& [s, p] : env.initial_distribution()) {
        dist[s] += p;
    }
    double value = 0.0;
    for (std::size_t t = 0; t < env.length() && !dist.empty(); ++t) {
        std::unordered_map<StateId, double> next;
        for (const auto& [s, ps] : dist) {
            for (ActionId a = 0; a < env.action_count(); ++a) {
                const double pa = policy(s, a);
                if (pa == 0.0) {
                    continue;
                }
                for (const auto& o : env.outcomes(s, a)) {
                    const double w = ps * pa * o.probability;
                    value += w * o.reward;
                    if (!o.done && w > 0.0) {
                        next[o.next] += w;
                    }
                }
            }
        }
        dist = std::move(next);
    }
    return value;
}

/// Return variance table for policy evaluation (undiscounted):
///   V(s,a) = Var[r | s,a] + E[V(s',a')] + Var_{s',a'}[q(s',a')]
/// Exact when the reward is independent of the successor given (s, a).
struct VarianceTable {
    ExactQ mean;
    std::vector<double> var;  ///< per (s, a)
    double initial_variance = 0.0;

    [[nodiscard]] double at(StateId s, ActionId a) const { return var[s * mean.actions + a]; }
};

template <EnumerableEnvironment Env>
VarianceTable variance_recursion(const Env& env, const PolicyFn& policy) {
    VarianceTable out;
    out.mean = backward_induction(env, std::optional<PolicyFn>(policy));
    const std::size_t A = env.action_count();
    out.var.assign(out.mean.states * A, std::numeric_limits<double>::quiet_NaN());
    std::vector<char> done_state(out.mean.states, 0);
    std::vector<double> vstate(out.mean.states, 0.0);  // E_a[V(s,a)]

    std::function<void(StateId)> solve = [&](StateId s) {
        if (done_state[s]) {
            return;
        }
        double ev = 0.0;
        for (ActionId a = 0; a < A; ++a) {
            double er = 0.0;
            double er2 = 0.0;
            double e_next_v = 0.0;
            double e_next_q = 0.0;
            double e_next_q2 = 0.0;
            for (const auto& o : env.outcomes(s, a)) {
                if (o.probability == 0.0) {
                    continue;
                }
                er += o.probability * o.reward;
                er2 += o.probability * o.reward * o.reward;
                if (o.done) {
                    continue;
                }
                solve(o.next);
                e_next_v += o.probability * vstate[o.next];
                for (ActionId b = 0; b < A; ++b) {
                    const double pb = policy(o.next, b);
                    if (pb == 0.0) {
                        continue;
                    }
                    const double q = out.mean.at(o.next, b);
                    e_next_q += o.probability * pb * q;
                    e_next_q2 += o.probability * pb * q * q;
                }
            }
            const double v = (er2 - er * er) + e_next_v + (e_next_q2 - e_next_q * e_next_q);
            out.var[s * A + a] = std::max(0.0, v);
            ev += policy(s, a) * out.var[s * A + a];
        }
        vstate[s] = ev;
        done_state[s] = 1;
    };

    double init_mean = 0.0;
    double init_second = 0.0;
    double init_inner = 0.0;
    for (const auto& [s, p] : env.initial_distribution()) {
        solve(s);
        for (ActionId a = 0; a < A; ++a) {
            const double pa = policy(s, a);
            const double q = out.mean.at(s, a);
            init_mean += p * pa * q;
            init_second += p * pa * q * q;
            init_inner += p * pa * out.var[s * A + a];
        }
    }
    out.initial_variance = init_inner + init_second - init_mean * init_mean;
    return out;
}

}  // namespace rudder
