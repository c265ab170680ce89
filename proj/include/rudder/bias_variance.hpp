#pragma once

// Bias and variance of action-value estimators for a fixed sampling policy,
// monitored at the first decision. TD uses exponentially weighted sample
// updates from q = 0; MC uses the arithmetic mean of observed returns.

#include "rudder/core.hpp"
#include "rudder/exact.hpp"
#include "rudder/tabular.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace rudder {

struct EstimatorCurve {
    std::vector<std::size_t> updates;  ///< episodes (TD) or visits (MC)
    std::vector<double> bias;          ///< mean over estimators minus truth
    std::vector<double> variance;      ///< across estimators (n-1 denominator)
    double truth = 0.0;
};

/// Epsilon-greedy wrapper around the optimal actions of an exact Q table.
inline TabularPolicy epsilon_optimal_policy(const ExactQ& opt, double epsilon) {
    std::vector<ActionId> choice(opt.states, 0);
    for (StateId s = 0; s < opt.states; ++s) {
        if (!opt.is_reachable(s)) continue;
        double best = opt.at(s, 0);
        for (ActionId a = 1; a < opt.actions; ++a) {
            if (opt.at(s, a) > best) {
                best = opt.at(s, a);
                choice[s] = a;
            }
        }
    }
    return TabularPolicy::epsilon_greedy(opt.actions, choice, epsilon);
}

/// Largest epsilon whose sampled event rate is still >= `target`, found by
/// bisection (rate assumed non-increasing in epsilon).
template <Environment Env>
double tune_epsilon(const Env& env, const ExactQ& opt, const std::function<bool(const EpisodeTrace&)>& event,
                    double target, std::size_t episodes, Rng& rng, int iterations = 20) {
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < iterations; ++i) {
        const double mid = 0.5 * (lo + hi);
        const TabularPolicy pi = epsilon_optimal_policy(opt, mid);
        std::size_t hits = 0;
        for (std::size_t k = 0; k < episodes; ++k) {
            hits += event(sample_episode(env, pi, rng)) ? 1 : 0;
        }
        if (static_cast<double>(hits) / static_cast<double>(episodes) >= target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

namespace detail {

inline void record(EstimatorCurve& c, std::size_t n, const std::vector<double>& est) {
    double m = 0.0;
    for (double e : est) m += e;
    m /= static_cast<double>(est.size());
    double v = 0.0;
    for (double e : est) v += (e - m) * (e - m);
    v = est.size() > 1 ? v / static_cast<double>(est.size() - 1) : 0.0;
    c.updates.push_back(n);
    c.bias.push_back(m - c.truth);
    c.variance.push_back(v);
}

}  // namespace detail

/// TD(0) policy evaluation with `estimators` independent tables; records the
/// estimate of q(s0, a0) every `every` episodes. `a0` is the most likely
/// first action of `policy` at the (single) start state.
template <EnumerableEnvironment Env>
EstimatorCurve td_first_state_curve(const Env& env, const TabularPolicy& policy, const ExactQ& truth, double alpha,
                                    std::size_t estimators, std::size_t episodes, std::size_t every, Rng& rng) {
    const StateId s0 = env.initial_distribution().front().first;
    ActionId a0 = 0;
    for (ActionId a = 1; a < env.action_count(); ++a) {
        if (policy.prob(s0, a) > policy.prob(s0, a0)) a0 = a;
    }
    EstimatorCurve curve;
    curve.truth = truth.at(s0, a0);
    std::vector<TabularQ> tables;
    for (std::size_t k = 0; k < estimators; ++k) tables.emplace_back(env.state_count(), env.action_count(), alpha);
    std::vector<double> est(estimators, 0.0);
    detail::record(curve, 0, est);
    for (std::size_t e = 1; e <= episodes; ++e) {
        for (std::size_t k = 0; k < estimators; ++k) {
            const EpisodeTrace tr = sample_episode(env, policy, rng);
            for (std::size_t t = 0; t < tr.size(); ++t) {
                const bool last = t + 1 == tr.size();
                sarsa_update(tables[k], tr.states[t], tr.actions[t], tr.rewards[t], last ? 0 : tr.states[t + 1],
                             last ? 0 : tr.actions[t + 1], last);
            }
            est[k] = tables[k].q(s0, a0);
        }
        if (e % every == 0) detail::record(curve, e, est);
    }
    return curve;
}

/// Arithmetic-mean MC estimates of q(s0, a0) after n = every, 2*every, ...,
/// max_visits visits, across `estimators` independent estimators.
template <EnumerableEnvironment Env>
EstimatorCurve mc_first_state_curve(const Env& env, const TabularPolicy& policy, const ExactQ& truth,
                                    std::size_t estimators, std::size_t max_visits, std::size_t every, Rng& rng) {
    const StateId s0 = env.initial_distribution().front().first;
    ActionId a0 = 0;
    for (ActionId a = 1; a < env.action_count(); ++a) {
        if (policy.prob(s0, a) > policy.prob(s0, a0)) a0 = a;
    }
    EstimatorCurve curve;
    curve.truth = truth.at(s0, a0);
    std::vector<std::vector<double>> at(max_visits / every, std::vector<double>(estimators));
    for (std::size_t k = 0; k < estimators; ++k) {
        double sum = 0.0;
        std::size_t n = 0;
        while (n < max_visits) {
            const EpisodeTrace tr = sample_episode(env, policy, rng);
            if (tr.actions.front() != a0) continue;
            sum += episode_return(tr);
            ++n;
            if (n % every == 0) at[n / every - 1][k] = sum / static_cast<double>(n);
        }
    }
    for (std::size_t i = 0; i < at.size(); ++i) detail::record(curve, (i + 1) * every, at[i]);
    return curve;
}

/// First recorded update count with |bias| <= threshold * |initial bias|,
/// or 0 when never reached.
inline std::size_t bias_correction_time(const EstimatorCurve& c, double threshold) {
    const double first = std::abs(c.bias.front());
    for (std::size_t i = 0; i < c.bias.size(); ++i) {
        if (std::abs(c.bias[i]) <= threshold * first) return c.updates[i];
    }
    return 0;
}

/// Least-squares slope of log(variance) against log(updates).
inline double log_log_slope(const EstimatorCurve& c) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < c.updates.size(); ++i) {
        if (c.updates[i] == 0 || !(c.variance[i] > 0.0)) continue;
        const double x = std::log(static_cast<double>(c.updates[i]));
        const double y = std::log(c.variance[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++m;
    }
    const double dm = static_cast<double>(m);
    return (dm * sxy - sx * sy) / (dm * sxx - sx * sx);
}

}  // namespace rudder
