#pragma once

// Return decomposition into per-step contributions and the resulting reward
// redistribution, plus the kappa diagnostics (expected future redistributed
// reward) and their use for reward correction.

#include "rudder/core.hpp"
#include "rudder/exact.hpp"
#include "rudder/lstm.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <tuple>
#include <vector>

namespace rudder {

enum class RedistributionMode { FinalCorrection, Uniform };
enum class ContributionSource { PredictionDiff, IntegratedGradients, Oracle };

inline const char* to_string(RedistributionMode m) {
    return m == RedistributionMode::FinalCorrection ? "final-correction" : "uniform";
}

inline const char* to_string(ContributionSource s) {
    switch (s) {
        case ContributionSource::PredictionDiff: return "prediction-diff";
        case ContributionSource::IntegratedGradients: return "integrated-gradients";
        default: return "oracle";
    }
}

struct Redistribution {
    std::vector<double> h;      ///< emitted per-step rewards h_0..h_T
    double compensation = 0.0;  ///< extra reward after the last step
    RedistributionMode mode = RedistributionMode::FinalCorrection;
    ContributionSource source = ContributionSource::PredictionDiff;

    [[nodiscard]] double total() const noexcept {
        double s = compensation;
        for (double x : h) s += x;
        return s;
    }

    /// CSV `t,h_t,cumulative,compensation`.
    void write_csv(std::ostream& os) const {
        const auto old = os.precision(std::numeric_limits<double>::max_digits10);
        os << "t,h_t,cumulative,compensation\n";
        double cum = 0.0;
        for (std::size_t t = 0; t < h.size(); ++t) {
            cum += h[t];
            os << t << ',' << h[t] << ',' << cum << ',' << compensation << '\n';
        }
        os.precision(old);
    }
};

/// h_0 = g_0, h_t = g_t - g_{t-1}.
inline std::vector<double> contributions_prediction_diff(std::span<const double> g) {
    std::vector<double> h(g.size());
    for (std::size_t t = 0; t < g.size(); ++t) {
        h[t] = t == 0 ? g[0] : g[t] - g[t - 1];
    }
    return h;
}

/// Inverse of contributions_prediction_diff.
inline std::vector<double> cumulative(std::span<const double> h) {
    std::vector<double> g(h.size());
    double acc = 0.0;
    for (std::size_t t = 0; t < h.size(); ++t) {
        acc += h[t];
        g[t] = acc;
    }
    return g;
}

/// Turns contributions into a return-equivalent redistribution of `ret`.
inline Redistribution redistribute(double ret, std::span<const double> contributions, RedistributionMode mode,
                                   ContributionSource source = ContributionSource::PredictionDiff) {
    if (contributions.empty()) {
        throw ConfigError("redistribution needs at least one contribution");
    }
    Redistribution r;
    r.h.assign(contributions.begin(), contributions.end());
    r.mode = mode;
    r.source = source;
    double sum = 0.0;
    for (double x : r.h) sum += x;
    const double residual = ret - sum;
    if (mode == RedistributionMode::FinalCorrection) {
        r.compensation = residual;
    } else {
        const double share = residual / static_cast<double>(r.h.size());
        for (auto& x : r.h) x += share;
        // Fold the rounding remainder so the sum is exact to the last bit we can get.
        double after = 0.0;
        for (double x : r.h) after += x;
        r.h.back() += ret - after;
    }
    return r;
}

// --- integrated gradients ------------------------------------------------------

struct IgResult {
    std::vector<double> per_input;  ///< steps x inputs
    std::vector<double> per_step;   ///< summed over inputs
    double output = 0.0;            ///< F(x)
    double baseline_output = 0.0;   ///< F(x~)
    double completeness_gap = 0.0;  ///< |sum - (F(x) - F(x~))|
};

/// Integrated gradients of the final prediction along the straight path from
/// `baseline` (all-zero when empty) to `x`, right Riemann sum with m points.
inline IgResult integrated_gradients(const LstmParams& p, std::span<const double> x, std::span<const double> baseline,
                                     std::size_t m) {
    if (m == 0) {
        throw ConfigError("integrated gradients needs at least one interpolation point");
    }
    std::vector<double> base(x.size(), 0.0);
    if (!baseline.empty()) {
        if (baseline.size() != x.size()) throw ConfigError("baseline shape differs from the input");
        base.assign(baseline.begin(), baseline.end());
    }
    const std::size_t n = x.size();
    std::vector<double> avg(n, 0.0);
    std::vector<double> xi(n);
    std::vector<double> dx;
    for (std::size_t k = 1; k <= m; ++k) {
        const double a = static_cast<double>(k) / static_cast<double>(m);
        for (std::size_t i = 0; i < n; ++i) xi[i] = base[i] + a * (x[i] - base[i]);
        const LstmState st = lstm_forward(p, xi);
        std::vector<double> dg(st.steps, 0.0);
        dg.back() = 1.0;
        lstm_backward(p, xi, st, dg, &dx);
        for (std::size_t i = 0; i < n; ++i) avg[i] += dx[i];
    }
    IgResult r;
    r.per_input.resize(n);
    const std::size_t T = n / p.inputs;
    r.per_step.assign(T, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        r.per_input[i] = (x[i] - base[i]) * avg[i] / static_cast<double>(m);
        r.per_step[i / p.inputs] += r.per_input[i];
        total += r.per_input[i];
    }
    r.output = lstm_forward(p, x).g.back();
    r.baseline_output = lstm_forward(p, base).g.back();
    r.completeness_gap = std::abs(total - (r.output - r.baseline_output));
    return r;
}

// --- oracle contributions ---------------------------------------------------------

/// h_t = q(s_t,a_t) - q(s_{t-1},a_{t-1}) with q(s_{-1},a_{-1}) = 0.
inline std::vector<double> contributions_oracle(const ExactQ& q, const EpisodeTrace& trace) {
    std::vector<double> h(trace.size());
    double prev = 0.0;
    for (std::size_t t = 0; t < trace.size(); ++t) {
        const double cur = q.at(trace.states[t], trace.actions[t]);
        if (std::isnan(cur)) {
            throw std::logic_error("oracle queried at an unreachable state");
        }
        h[t] = cur - prev;
        prev = cur;
    }
    return h;
}

/// Oracle contributions of the process that pays the whole return at the
/// end. Its state carries the rewards collected so far, so its q is
/// sum_{tau<t} r_tau + q(s_t,a_t) and the differences pick up r_{t-1}.
/// Identical to contributions_oracle when only the last step is rewarded.
inline std::vector<double> contributions_oracle_delayed(const ExactQ& q, const EpisodeTrace& trace) {
    std::vector<double> h = contributions_oracle(q, trace);
    for (std::size_t t = 1; t < h.size(); ++t) h[t] += trace.rewards[t - 1];
    return h;
}

/// The delayed-form contributions minus the rewards already paid, for use
/// as an add-on to r_t: then r_t + h_t is the full return decomposition.
inline std::vector<double> contributions_oracle_on_top(const ExactQ& q, const EpisodeTrace& trace) {
    std::vector<double> h = contributions_oracle_delayed(q, trace);
    for (std::size_t t = 0; t < h.size(); ++t) h[t] -= trace.rewards[t];
    return h;
}

// --- kappa -----------------------------------------------------------------------

/// kappa(m, t) = E[ h_{t+1} + ... + h_{t+1+m} | s_t, a_t ],
/// 0 <= t <= L-2, 0 <= m <= L-2-t, where L is the number of decisions.
struct KappaCell {
    std::size_t m = 0;
    std::size_t t = 0;
    double mean = 0.0;
    double se = 0.0;
    std::size_t count = 0;

    [[nodiscard]] bool within(double k = 3.0) const { return std::abs(mean) <= k * se + 1e-12; }
};

struct KappaTable {
    std::size_t length = 0;          ///< L
    std::vector<KappaCell> cells;    ///< occupancy averaged
    std::vector<KappaCell> conditional;  ///< per (s_t, a_t) with enough samples
    std::vector<StateId> cond_state;
    std::vector<ActionId> cond_action;

    [[nodiscard]] const KappaCell& at(std::size_t m, std::size_t t) const {
        for (const auto& c : cells) {
            if (c.m == m && c.t == t) return c;
        }
        throw std::out_of_range("kappa cell not present");
    }

    [[nodiscard]] bool all_within(double k = 3.0) const {
        for (const auto& c : cells) {
            if (!c.within(k)) return false;
        }
        return true;
    }
};

namespace detail {

struct Moments {
    double sum = 0.0;
    double sum2 = 0.0;
    std::size_t n = 0;

    void add(double x) {
        sum += x;
        sum2 += x * x;
        ++n;
    }

    [[nodiscard]] KappaCell cell(std::size_t m, std::size_t t) const {
        KappaCell c;
        c.m = m;
        c.t = t;
        c.count = n;
        if (n == 0) return c;
        c.mean = sum / static_cast<double>(n);
        const double var = n > 1 ? std::max(0.0, (sum2 - sum * c.mean) / static_cast<double>(n - 1)) : 0.0;
        c.se = std::sqrt(var / static_cast<double>(n));
        return c;
    }
};

}  // namespace detail

/// Monte Carlo kappa table. `choose(s, rng)` picks actions, `contrib(trace)`
/// returns h_0..h_{L-1}. Conditional cells need at least `min_count` samples.
template <Environment Env, class Chooser, class Contrib>
KappaTable kappa_empirical(const Env& env, Chooser&& choose, Contrib&& contrib, std::size_t episodes, Rng& rng,
                           std::size_t min_count = 0) {
    const std::size_t L = env.length();
    KappaTable table;
    table.length = L;
    if (L < 2) {
        return table;
    }
    std::vector<detail::Moments> occ((L - 1) * (L - 1));
    std::map<std::tuple<std::size_t, std::size_t, StateId, ActionId>, detail::Moments> cond;
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        const EpisodeTrace trace = sample_episode(env, choose, rng);
        const std::vector<double> h = contrib(trace);
        for (std::size_t t = 0; t + 1 < L; ++t) {
            double window = 0.0;
            for (std::size_t m = 0; t + 1 + m < L; ++m) {
                window += h[t + 1 + m];
                occ[m * (L - 1) + t].add(window);
                if (min_count > 0) {
                    cond[{m, t, trace.states[t], trace.actions[t]}].add(window);
                }
            }
        }
    }
    for (std::size_t t = 0; t + 1 < L; ++t) {
        for (std::size_t m = 0; t + 1 + m < L; ++m) {
            table.cells.push_back(occ[m * (L - 1) + t].cell(m, t));
        }
    }
    for (const auto& [key, mom] : cond) {
        if (mom.n < min_count) continue;
        table.conditional.push_back(mom.cell(std::get<0>(key), std::get<1>(key)));
        table.cond_state.push_back(std::get<2>(key));
        table.cond_action.push_back(std::get<3>(key));
    }
    return table;
}

/// Kappa table of the model-based redistribution: episodes follow the
/// uniform random policy and h comes from differences of its exact q on the
/// fully delayed process.
template <EnumerableEnvironment Env>
KappaTable oracle_kappa(const Env& env, std::size_t episodes, Rng& rng, std::size_t min_count = 0) {
    const ExactQ q = backward_induction(env, uniform_policy_fn(env.action_count()));
    std::uniform_int_distribution<ActionId> pick(0, env.action_count() - 1);
    return kappa_empirical(
        env, [&](StateId, Rng& r) { return pick(r); },
        [&](const EpisodeTrace& tr) { return contributions_oracle_delayed(q, tr); }, episodes, rng, min_count);
}

/// CSV `m,t,mean,se,count,within`.
inline void write_kappa_csv(std::ostream& os, const KappaTable& k, double n_se = 3.0) {
    os << "m,t,mean,se,count,within\n";
    for (const auto& c : k.cells) {
        os << c.m << ',' << c.t << ',' << c.mean << ',' << c.se << ',' << c.count << ',' << (c.within(n_se) ? 1 : 0)
           << '\n';
    }
}

/// Tabular TD(lambda) estimate of kappa(L-2-t, t)(s,a): the expected sum of
/// all later redistributed rewards.
class KappaTd {
public:
    KappaTd(std::size_t states, std::size_t actions, double alpha, double lambda = 0.0)
        : actions_(actions), alpha_(alpha), lambda_(lambda), k_(states * actions, 0.0), z_(states * actions, 0.0) {}

    [[nodiscard]] double value(StateId s, ActionId a) const { return k_[s * actions_ + a]; }

    /// delta = r_next + kappa(s',a') - kappa(s,a); kappa(s',a') := 0 when terminal.
    double update(StateId s, ActionId a, double r_next, StateId s2, ActionId a2, bool terminal) {
        const std::size_t i = s * actions_ + a;
        const double delta = r_next + (terminal ? 0.0 : k_[s2 * actions_ + a2]) - k_[i];
        if (lambda_ == 0.0) {
            k_[i] += alpha_ * delta;
        } else {
            if (z_[i] == 0.0) live_.push_back(i);
            z_[i] += 1.0;
            for (std::size_t j : live_) k_[j] += alpha_ * delta * z_[j];
            for (std::size_t j : live_) z_[j] *= lambda_;
            if (terminal) {
                for (std::size_t j : live_) z_[j] = 0.0;
                live_.clear();
            }
        }
        return delta;
    }

    /// Runs the updates of one episode with redistributed rewards `h`.
    void learn_episode(const EpisodeTrace& trace, std::span<const double> h) {
        const std::size_t L = trace.size();
        for (std::size_t t = 0; t + 1 < L; ++t) {
            update(trace.states[t], trace.actions[t], h[t + 1], trace.states[t + 1], trace.actions[t + 1], t + 2 == L);
        }
    }

    /// kappa along a trace, with kappa at the last step fixed to 0.
    [[nodiscard]] std::vector<double> along(const EpisodeTrace& trace) const {
        std::vector<double> k(trace.size(), 0.0);
        for (std::size_t t = 0; t + 1 < trace.size(); ++t) k[t] = value(trace.states[t], trace.actions[t]);
        return k;
    }

private:
    std::size_t actions_;
    double alpha_;
    double lambda_;
    std::vector<double> k_;
    std::vector<double> z_;
    std::vector<std::size_t> live_;
};

/// R^c_t = h_t + kappa_t - kappa_{t-1}, kappa_{-1} = 0 and the last kappa
/// taken as 0, so the episode sum is unchanged.
inline std::vector<double> reward_correction(std::span<const double> h, std::span<const double> kappa) {
    if (h.size() != kappa.size()) {
        throw ConfigError("kappa must have one entry per step");
    }
    const std::size_t L = h.size();
    std::vector<double> out(L);
    double prev = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
        const double k = t + 1 == L ? 0.0 : kappa[t];
        out[t] = h[t] + k - prev;
        prev = k;
    }
    return out;
}

/// Backward recursion G_t = r_t + lambda G_{t+1}, G_L = 0.
inline std::vector<double> lambda_redistributed_return(std::span<const double> rewards, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw ConfigError("lambda must lie in [0, 1]");
    }
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t t = rewards.size(); t-- > 0;) {
        acc = rewards[t] + lambda * acc;
        g[t] = acc;
    }
    return g;
}

}  // namespace rudder
