#pragma once

// Learners driven episode by episode: the RUDDER agent (return predictor,
// redistribution, Q estimation), the tabular TD and Monte Carlo baselines
// with optional shaping/advice, and an MCTS learner.

#include "rudder/core.hpp"
#include "rudder/lstm.hpp"
#include "rudder/mcts.hpp"
#include "rudder/redistribution.hpp"
#include "rudder/shaping.hpp"
#include "rudder/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <vector>

namespace rudder {

// --- lessons buffer --------------------------------------------------------------

struct Lesson {
    std::vector<double> x;  ///< delta features
    double target = 0.0;    ///< normalised regression target
    double ret = 0.0;       ///< episode return
    double loss = 0.0;      ///< last known loss
};

namespace detail {

/// 1-based ranks, ties share their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace detail

/// Priority buffer of episodes for the return predictor. Importance is the
/// sum of the rank by loss and the rank by |return - mean return|.
class LessonsBuffer {
public:
    explicit LessonsBuffer(std::size_t capacity = 128) : capacity_(capacity) {
        if (capacity_ == 0) throw ConfigError("lessons buffer needs a positive capacity");
    }

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
    [[nodiscard]] double mean_return() const noexcept {
        return items_.empty() ? 0.0 : return_sum_ / static_cast<double>(items_.size());
    }
    [[nodiscard]] const Lesson& at(std::size_t i) const { return items_.at(i); }
    [[nodiscard]] Lesson& at(std::size_t i) { return items_.at(i); }

    /// Combined ranks of the stored entries plus an optional candidate (last).
    [[nodiscard]] std::vector<double> combined_ranks(const Lesson* candidate = nullptr) const {
        std::vector<double> loss;
        std::vector<double> dev;
        const double mean = mean_return();
        for (const auto& l : items_) {
            loss.push_back(l.loss);
            dev.push_back(std::abs(l.ret - mean));
        }
        if (candidate) {
            loss.push_back(candidate->loss);
            dev.push_back(std::abs(candidate->ret - mean));
        }
        const auto rl = detail::average_ranks(loss);
        const auto rd = detail::average_ranks(dev);
        std::vector<double> out(rl.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = rl[i] + rd[i];
        return out;
    }

    /// Inserts when there is room or when the candidate outranks the least
    /// important stored entry (which is then evicted). Returns true on insert.
    bool consider(Lesson lesson) {
        if (items_.size() < capacity_) {
            return_sum_ += lesson.ret;
            items_.push_back(std::move(lesson));
            return true;
        }
        const auto ranks = combined_ranks(&lesson);
        const double cand = ranks.back();
        std::size_t worst = 0;
        for (std::size_t i = 1; i + 1 < ranks.size(); ++i) {
            if (ranks[i] < ranks[worst]) worst = i;
        }
        if (!(cand > ranks[worst])) {
            return false;
        }
        return_sum_ += lesson.ret - items_[worst].ret;
        items_[worst] = std::move(lesson);
        return true;
    }

    /// Softmax over losses.
    std::size_t sample(Rng& rng) const {
        if (items_.empty()) throw std::logic_error("sampling from an empty lessons buffer");
        double mx = -std::numeric_limits<double>::infinity();
        for (const auto& l : items_) mx = std::max(mx, l.loss);
        std::vector<double> w(items_.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(items_[i].loss - mx);
        std::discrete_distribution<std::size_t> d(w.begin(), w.end());
        return d(rng);
    }

private:
    std::size_t capacity_;
    std::vector<Lesson> items_;
    double return_sum_ = 0.0;
};

// --- return decomposition driven by the LSTM -------------------------------------

struct Decomposition {
    std::vector<double> g;  ///< return predictions, reward units
    std::vector<double> h;  ///< contributions, reward units (zero while gated)
    double loss = 0.0;
    bool active = false;    ///< quality gate passed
};

struct LstmRedistributorConfig {
    LstmConfig lstm;
    double gate_threshold = 0.2;   ///< mean |g_last - target| in scale units
    std::size_t gate_window = 32;
    bool use_buffer = false;
    std::size_t buffer_capacity = 128;
};

/// Trains a return predictor on every episode (target: the reward of the
/// final transition, divided by the env reward scale) and returns the
/// pre-update predictions and their prediction differences.
template <DeltaEncodedEnvironment Env>
class LstmRedistributor {
public:
    LstmRedistributor(const Env& env, double scale, LstmRedistributorConfig cfg, Rng& rng)
        : env_(env), scale_(scale), cfg_(cfg), predictor_(env.delta_dim(), cfg.lstm, rng),
          buffer_(cfg.buffer_capacity) {
        if (!(scale_ > 0.0)) throw ConfigError("reward scale must be positive");
    }

    [[nodiscard]] const ReturnPredictor& predictor() const noexcept { return predictor_; }
    [[nodiscard]] bool gate_open() const noexcept { return open_; }
    [[nodiscard]] const LessonsBuffer& buffer() const noexcept { return buffer_; }

    Decomposition process(const EpisodeTrace& trace, Rng& rng) {
        const std::vector<double> x = encode_episode(env_, trace);
        const double target = trace.rewards.back() / scale_;
        std::vector<double> g;
        Decomposition d;
        d.loss = predictor_.train(x, target, &g);

        errors_.push_back(std::abs(g.back() - target));
        err_sum_ += errors_.back();
        if (errors_.size() > cfg_.gate_window) {
            err_sum_ -= errors_.front();
            errors_.pop_front();
        }
        if (!open_ && errors_.size() == cfg_.gate_window &&
            err_sum_ / static_cast<double>(cfg_.gate_window) < cfg_.gate_threshold) {
            open_ = true;
        }

        if (cfg_.use_buffer) {
            buffer_.consider(Lesson{x, target, episode_return(trace), d.loss});
            const std::size_t i = buffer_.sample(rng);
            Lesson& l = buffer_.at(i);
            l.loss = predictor_.train(l.x, l.target);
        }

        d.g.resize(g.size());
        for (std::size_t t = 0; t < g.size(); ++t) d.g[t] = g[t] * scale_;
        d.active = open_;
        d.h = open_ ? contributions_prediction_diff(d.g) : std::vector<double>(g.size(), 0.0);
        return d;
    }

private:
    const Env& env_;
    double scale_;
    LstmRedistributorConfig cfg_;
    ReturnPredictor predictor_;
    LessonsBuffer buffer_;
    std::deque<double> errors_;
    double err_sum_ = 0.0;
    bool open_ = false;
};

/// Emitted rewards: immediate rewards before the last step, contributions on
/// top, and the final transition's reward replaced by its residual so the
/// episode sum is unchanged.
inline std::vector<double> emitted_rewards(const EpisodeTrace& trace, std::span<const double> h) {
    const std::size_t L = trace.size();
    std::vector<double> out(L);
    double hsum = 0.0;
    for (std::size_t t = 0; t < L; ++t) {
        hsum += h[t];
        out[t] = (t + 1 < L ? trace.rewards[t] : 0.0) + h[t];
    }
    out[L - 1] += trace.rewards[L - 1] - hsum;
    return out;
}

/// Expected future emitted reward E[sum_{tau>=t} emitted_tau | s_t, a_t] under
/// `policy`, by enumerating every trajectory with its probability. Only for
/// small envs: the cost is the number of distinct paths.
template <EnumerableEnvironment Env, class Contrib>
ExactQ redistributed_q_exact(const Env& env, const PolicyFn& policy, Contrib&& contrib) {
    const std::size_t S = env.state_count();
    const std::size_t A = env.action_count();
    std::vector<double> mass(S * A, 0.0);
    std::vector<double> acc(S * A, 0.0);
    EpisodeTrace tr;
    std::function<void(StateId, double)> walk = [&](StateId s, double p) {
        for (ActionId a = 0; a < A; ++a) {
            const double pa = policy(s, a);
            if (pa <= 0.0) continue;
            for (const Outcome& o : env.outcomes(s, a)) {
                const double po = p * pa * o.probability;
                if (po <= 0.0) continue;
                tr.push(s, a, o.reward, o.done);
                if (o.done || tr.size() == env.length()) {
                    const std::vector<double> h = contrib(static_cast<const EpisodeTrace&>(tr));
                    const std::vector<double> em = emitted_rewards(tr, h);
                    double tail = 0.0;
                    for (std::size_t t = tr.size(); t-- > 0;) {
                        tail += em[t];
                        const std::size_t k = tr.states[t] * A + tr.actions[t];
                        mass[k] += po;
                        acc[k] += po * tail;
                    }
                } else {
                    walk(o.next, po);
                }
                tr.states.pop_back();
                tr.actions.pop_back();
                tr.rewards.pop_back();
                tr.dones.pop_back();
            }
        }
    };
    for (const auto& [s, p] : env.initial_distribution()) walk(s, p);

    ExactQ out;
    out.states = S;
    out.actions = A;
    out.q.assign(S * A, std::numeric_limits<double>::quiet_NaN());
    out.v.assign(S, std::numeric_limits<double>::quiet_NaN());
    out.reachable.assign(S, 0);
    for (StateId s = 0; s < S; ++s) {
        for (ActionId a = 0; a < A; ++a) {
            const std::size_t k = s * A + a;
            if (mass[k] > 0.0) {
                out.q[k] = acc[k] / mass[k];
                out.reachable[s] = 1;
            }
        }
    }
    return out;
}

/// Sup over visited (s, a) of |(q~ - sum_b pi(b|s) q~(s,b)) - (q - v)| with
/// q the exact action values of `policy`.
template <EnumerableEnvironment Env>
double advantage_gap(const Env& env, const PolicyFn& policy, const ExactQ& redistributed) {
    const ExactQ q = backward_induction(env, policy);
    double gap = 0.0;
    for (StateId s = 0; s < redistributed.states; ++s) {
        if (!redistributed.is_reachable(s)) continue;
        double mean_r = 0.0;
        double mean_q = 0.0;
        bool complete = true;
        for (ActionId a = 0; a < redistributed.actions; ++a) {
            const double p = policy(s, a);
            if (p <= 0.0) continue;
            if (std::isnan(redistributed.at(s, a))) complete = false;
            mean_r += p * redistributed.at(s, a);
            mean_q += p * q.at(s, a);
        }
        if (!complete) continue;
        for (ActionId a = 0; a < redistributed.actions; ++a) {
            if (policy(s, a) <= 0.0) continue;
            gap = std::max(gap, std::abs((redistributed.at(s, a) - mean_r) - (q.at(s, a) - mean_q)));
        }
    }
    return gap;
}

// --- RUDDER agent -------------------------------------------------------------------

enum class QEstimation { Ema, QLearning };

struct RudderConfig {
    QEstimation estimation = QEstimation::Ema;
    double ema_rate = 0.1;   ///< beta for the EMA estimate
    double alpha = 0.1;      ///< learning rate for Q-learning mode
    double lambda = 0.0;     ///< trace decay for Q-learning mode
    double epsilon = 0.2;
    LstmRedistributorConfig redistributor;
};

/// Contributions from a model oracle instead of the LSTM.
using OracleContributions = std::function<std::vector<double>(const EpisodeTrace&)>;

template <DeltaEncodedEnvironment Env>
class RudderAgent {
public:
    RudderAgent(const Env& env, double scale, RudderConfig cfg, Rng& rng)
        : env_(env), cfg_(cfg), q_(env.state_count(), env.action_count(), cfg.alpha, cfg.lambda),
          lstm_(std::make_unique<LstmRedistributor<Env>>(env, scale, cfg.redistributor, rng)) {}

    RudderAgent(const Env& env, RudderConfig cfg, OracleContributions oracle)
        : env_(env), cfg_(cfg), q_(env.state_count(), env.action_count(), cfg.alpha, cfg.lambda),
          oracle_(std::move(oracle)) {}

    [[nodiscard]] const TabularQ& q() const noexcept { return q_; }
    [[nodiscard]] TabularQ& q() noexcept { return q_; }
    [[nodiscard]] double last_loss() const noexcept { return last_loss_; }
    [[nodiscard]] const LstmRedistributor<Env>* redistributor() const noexcept { return lstm_.get(); }

    ActionId act(StateId s, Rng& rng) const { return epsilon_greedy(q_.row(s), cfg_.epsilon, rng); }

    EpisodeTrace episode(Rng& rng) {
        EpisodeTrace trace = sample_episode(env_, [&](StateId s, Rng& r) { return act(s, r); }, rng);
        std::vector<double> h;
        if (oracle_) {
            h = oracle_(trace);
            last_loss_ = 0.0;
        } else {
            Decomposition d = lstm_->process(trace, rng);
            h = std::move(d.h);
            last_loss_ = d.loss;
        }
        learn(trace, emitted_rewards(trace, h));
        return trace;
    }

    /// Applies the Q estimate to an episode with given emitted rewards.
    void learn(const EpisodeTrace& trace, const std::vector<double>& emitted) {
        const std::size_t L = trace.size();
        if (cfg_.estimation == QEstimation::Ema) {
            for (std::size_t t = 0; t < L; ++t) {
                double& v = q_.q(trace.states[t], trace.actions[t]);
                v += cfg_.ema_rate * (emitted[t] - v);
                ++q_.n(trace.states[t], trace.actions[t]);
            }
            return;
        }
        q_.clear_traces();
        for (std::size_t t = 0; t < L; ++t) {
            const bool last = t + 1 == L;
            const StateId next = last ? trace.states[t] : trace.states[t + 1];
            const ActionId next_a = last ? 0 : trace.actions[t + 1];
            watkins_q_lambda_update(q_, trace.states[t], trace.actions[t], emitted[t], next, next_a, last);
        }
    }

private:
    const Env& env_;
    RudderConfig cfg_;
    TabularQ q_;
    std::unique_ptr<LstmRedistributor<Env>> lstm_;
    OracleContributions oracle_;
    double last_loss_ = 0.0;
};

// --- TD baselines (with optional shaping) ------------------------------------------

enum class TdRule { QLambda, SarsaLambda, ExpectedSarsa };

struct TdConfig {
    TdRule rule = TdRule::QLambda;
    double alpha = 0.1;
    double lambda = 0.0;
    double epsilon = 0.2;
    TraceKind trace = TraceKind::Accumulating;
    bool watkins_cut = true;
    double q_init = 0.0;
};

template <Environment Env>
class TdLearner {
public:
    TdLearner(const Env& env, TdConfig cfg)
        : env_(env), cfg_(cfg), q_(env.state_count(), env.action_count(), cfg.alpha, cfg.lambda, cfg.trace) {
        q_.fill(cfg.q_init);
    }

    /// Adds potential-based shaping/advice; the potential is owned elsewhere.
    void set_advice(const Potential* phi, AdviceKind kind) {
        phi_ = phi;
        kind_ = kind;
    }

    [[nodiscard]] const TabularQ& q() const noexcept { return q_; }
    [[nodiscard]] TabularQ& q() noexcept { return q_; }

    ActionId act(StateId s, Rng& rng) const {
        if (phi_ && kind_ == AdviceKind::LookAhead) {
            // Look-ahead advice biases action selection by the potential.
            std::vector<double> row(q_.action_count());
            for (ActionId a = 0; a < row.size(); ++a) row[a] = q_.q(s, a) + phi_->state_action(s, a);
            return epsilon_greedy(row, cfg_.epsilon, rng);
        }
        return epsilon_greedy(q_.row(s), cfg_.epsilon, rng);
    }

    EpisodeTrace episode(Rng& rng) {
        EpisodeTrace trace;
        trace.reserve(env_.length());
        q_.clear_traces();
        StateId s = env_.reset(rng);
        ActionId a = act(s, rng);
        double prev_phi = 0.0;
        for (std::size_t t = 0; t < env_.length(); ++t) {
            const Step st = env_.step(s, a, rng);
            const bool done = st.done;
            const ActionId a2 = done ? 0 : act(st.next, rng);
            double r = st.reward;
            if (phi_) {
                r += advice(t, s, a, st.next, a2, done, prev_phi);
            }
            switch (cfg_.rule) {
                case TdRule::QLambda:
                    watkins_q_lambda_update(q_, s, a, r, st.next, a2, done, cfg_.watkins_cut);
                    break;
                case TdRule::SarsaLambda:
                    sarsa_lambda_update(q_, s, a, r, st.next, a2, done);
                    break;
                case TdRule::ExpectedSarsa: {
                    std::vector<double> pi(q_.action_count(), 0.0);
                    if (!done) {
                        for (ActionId b = 0; b < pi.size(); ++b) pi[b] = epsilon_greedy_prob(q_.row(st.next), cfg_.epsilon, b);
                    }
                    expected_sarsa_update(q_, s, a, r, st.next, pi, done);
                    break;
                }
            }
            trace.push(s, a, st.reward, done);
            s = st.next;
            a = a2;
            if (done) break;
        }
        return trace;
    }

private:
    double advice(std::size_t t, StateId s, ActionId a, StateId s2, ActionId a2, bool done, double& prev_phi) const {
        switch (kind_) {
            case AdviceKind::RewardShaping: {
                const double next = done ? 0.0 : phi_->state(s2);
                return shaping_reward(phi_->state(s), next) + (t == 0 ? phi_->state(s) : 0.0);
            }
            case AdviceKind::LookAhead: {
                const double next = done ? 0.0 : phi_->state_action(s2, a2);
                return look_ahead_advice(phi_->state_action(s, a), next) + (t == 0 ? phi_->state_action(s, a) : 0.0);
            }
            case AdviceKind::LookBack: {
                const double cur = phi_->state_action(s, a);
                const double f = look_back_advice(t == 0 ? 0.0 : prev_phi, cur) - (done ? cur : 0.0);
                prev_phi = cur;
                return f;
            }
        }
        return 0.0;
    }

    const Env& env_;
    TdConfig cfg_;
    TabularQ q_;
    const Potential* phi_ = nullptr;
    AdviceKind kind_ = AdviceKind::RewardShaping;
};

// --- Monte Carlo ------------------------------------------------------------------------

struct McConfig {
    double alpha = 0.1;
    double epsilon = 0.2;
    bool arithmetic_mean = false;
    double q_init = 0.0;
};

template <Environment Env>
class McLearner {
public:
    McLearner(const Env& env, McConfig cfg) : env_(env), cfg_(cfg), q_(env.state_count(), env.action_count(), cfg.alpha) {
        q_.fill(cfg.q_init);
    }

    [[nodiscard]] const TabularQ& q() const noexcept { return q_; }

    ActionId act(StateId s, Rng& rng) const { return epsilon_greedy(q_.row(s), cfg_.epsilon, rng); }

    EpisodeTrace episode(Rng& rng) {
        EpisodeTrace trace = sample_episode(env_, [&](StateId s, Rng& r) { return act(s, r); }, rng);
        if (cfg_.arithmetic_mean) {
            mc_update_mean(q_, trace);
        } else {
            mc_update_constant_alpha(q_, trace);
        }
        return trace;
    }

private:
    const Env& env_;
    McConfig cfg_;
    TabularQ q_;
};

// --- MCTS as a learner ---------------------------------------------------------------------

/// One tree simulation from the start state per episode; the tree persists.
template <Environment Env>
class MctsLearner {
public:
    MctsLearner(const Env& env, MctsConfig cfg) : env_(env), tree_(env, cfg) {}

    [[nodiscard]] const MctsTree<Env>& tree() const noexcept { return tree_; }

    double episode(Rng& rng) { return tree_.simulate(env_.reset(rng), 0, rng); }

    ActionId greedy(StateId s, Rng& rng) const { return tree_.greedy(s, rng); }

private:
    const Env& env_;
    MctsTree<Env> tree_;
};

// --- solved checks ---------------------------------------------------------------------------

/// Exponential moving average used by the solved checks.
class Ema {
public:
    explicit Ema(double rate = 0.005, double init = 0.0) : rate_(rate), value_(init) {}
    double add(double x) {
        value_ += rate_ * (x - value_);
        return value_;
    }
    [[nodiscard]] double value() const noexcept { return value_; }

private:
    double rate_;
    double value_;
};

/// True when `ema >= threshold * optimal`.
inline bool solved_check(double ema, std::optional<double> optimal, double threshold = 0.9) {
    if (!optimal) {
        throw ConfigError("solved check needs the optimal return");
    }
    return ema >= threshold * *optimal;
}

/// Greedy policy of a Q table as pi(a|s) (ties share the mass).
inline PolicyFn greedy_policy_fn(const TabularQ& q) {
    return [&q](StateId s, ActionId a) { return epsilon_greedy_prob(q.row(s), 0.0, a); };
}

/// Per-episode metrics stream `episode,return,loss,solved`.
inline void write_metrics_header(std::ostream& os) { os << "episode,return,loss,solved\n"; }

inline void write_metrics_row(std::ostream& os, std::size_t episode, double ret, double loss, bool solved) {
    os << episode << ',' << ret << ',' << loss << ',' << (solved ? 1 : 0) << '\n';
}

}  // namespace rudder
