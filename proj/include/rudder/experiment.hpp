#pragma once

// Experiment orchestration: key=value configuration, per-trial learners and
// solved checks, trial scheduling over a thread pool, and CSV output.

#include "rudder/agent.hpp"
#include "rudder/envs.hpp"
#include "rudder/exact.hpp"
#include "rudder/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace rudder {

using envs::ChargeDischargeConfig;
using envs::ChoiceConfig;
using envs::GridWorldConfig;
using envs::TraceBackConfig;

// --- configuration file --------------------------------------------------------------

/// Flat `key = value` text. `[name]` starts a section; keys before the first
/// section belong to the unnamed global section. `#` starts a comment.
class Config {
public:
    static Config parse(std::istream& is, const std::string& origin = "config") {
        Config c;
        std::string line;
        std::string section;
        std::size_t no = 0;
        while (std::getline(is, line)) {
            ++no;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(no) + ": unterminated section");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
            }
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(no) + ": empty key");
            c.set(section, key, trim(line.substr(eq + 1)));
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config " + path);
        return parse(in, path);
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        data_[section][key] = Entry{value, false};
    }

    [[nodiscard]] bool has(const std::string& section, const std::string& key) const {
        auto s = data_.find(section);
        return s != data_.end() && s->second.count(key) > 0;
    }

    [[nodiscard]] std::string str(const std::string& section, const std::string& key, const std::string& def) const {
        auto s = data_.find(section);
        if (s == data_.end()) return def;
        auto k = s->second.find(key);
        if (k == s->second.end()) return def;
        k->second.used = true;
        return k->second.value;
    }

    [[nodiscard]] double num(const std::string& section, const std::string& key, double def) const {
        if (!has(section, key)) return def;
        const std::string v = str(section, key, "");
        try {
            std::size_t pos = 0;
            const double d = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ConfigError(where(section, key) + " is not a number: " + v);
        }
    }

    [[nodiscard]] std::size_t count(const std::string& section, const std::string& key, std::size_t def) const {
        const double d = num(section, key, static_cast<double>(def));
        if (d < 0 || d != std::floor(d)) throw ConfigError(where(section, key) + " must be a non-negative integer");
        return static_cast<std::size_t>(d);
    }

    [[nodiscard]] bool flag(const std::string& section, const std::string& key, bool def) const {
        if (!has(section, key)) return def;
        const std::string v = str(section, key, "");
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw ConfigError(where(section, key) + " is not a boolean: " + v);
    }

    [[nodiscard]] std::vector<std::string> list(const std::string& section, const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(str(section, key, ""));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    /// Every key must have been read at least once, except in `skip` sections.
    void check_all_used(const std::vector<std::string>& skip = {}) const {
        for (const auto& [sec, keys] : data_) {
            if (std::find(skip.begin(), skip.end(), sec) != skip.end()) continue;
            for (const auto& [k, e] : keys) {
                if (!e.used) throw ConfigError("unknown config key " + where(sec, k));
            }
        }
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

private:
    struct Entry {
        std::string value;
        mutable bool used = false;
    };

    static std::string where(const std::string& section, const std::string& key) {
        return section.empty() ? key : "[" + section + "] " + key;
    }

    std::map<std::string, std::map<std::string, Entry>> data_;
};

// --- experiment description -------------------------------------------------------------

enum class Task { GridWorld, Choice, TraceBack, ChargeDischarge };

inline Task parse_task(const std::string& s) {
    if (s == "gridworld") return Task::GridWorld;
    if (s == "choice") return Task::Choice;
    if (s == "traceback") return Task::TraceBack;
    if (s == "chargedischarge") return Task::ChargeDischarge;
    throw ConfigError("unknown task: " + s);
}

inline const char* to_string(Task t) {
    switch (t) {
        case Task::GridWorld: return "gridworld";
        case Task::Choice: return "choice";
        case Task::TraceBack: return "traceback";
        default: return "chargedischarge";
    }
}

enum class MethodKind { Rudder, Mc, Td, Mcts, Shaped };

struct MethodSpec {
    std::string name;
    MethodKind kind = MethodKind::Td;
    TdConfig td;
    McConfig mc;
    RudderConfig rudder;
    bool oracle = false;               ///< rudder: model-based contributions
    std::size_t oracle_refresh = 0;    ///< gridworld oracle: 0 uses q*, else episodes between q^pi refreshes
    AdviceKind advice = AdviceKind::RewardShaping;
    PotentialVariant variant = PotentialVariant::I;
    double potential_rate = 0.1;
    LstmRedistributorConfig redistributor;  ///< shaped methods
    MctsConfig mcts;
};

struct TaskSpec {
    Task task = Task::Choice;
    ChoiceConfig choice;
    TraceBackConfig traceback;
    GridWorldConfig gridworld;
    ChargeDischargeConfig chargedischarge;
    double solve_rate = 0.005;     ///< EMA rate of the solved statistic
    double solve_threshold = 0.8;  ///< choice: EMA of a_0 = +; traceback: EMA of greedy value
    double solve_fraction = 0.9;   ///< gridworld / chargedischarge: of the optimal return
    std::size_t eval_every = 1;
};

struct ExperimentConfig {
    TaskSpec task;
    std::vector<MethodSpec> methods;
    std::vector<int> delays;
    std::size_t trials = 100;
    std::uint64_t seed = 1;
    std::size_t episode_cap = 100000000;
    std::size_t jobs = 0;            ///< 0: hardware concurrency
    std::size_t metrics_trials = 0;  ///< per-episode metrics for the first k trials of each cell
};

namespace detail {

inline bool allowed(Task task, const std::string& m) {
    static const std::vector<std::string> common = {"rudder-ema", "rudder-q", "mc", "q", "qlambda"};
    if (std::find(common.begin(), common.end(), m) != common.end()) return true;
    switch (task) {
        case Task::GridWorld: return m == "mcts";
        case Task::TraceBack:
            if (m == "sarsalambda" || m == "expsarsa") return true;
            for (const char* p : {"rs-", "lookahead-", "lookback-"}) {
                const std::string pre(p);
                if (m.rfind(pre, 0) == 0) {
                    const std::string v = m.substr(pre.size());
                    return v == "I" || v == "II" || v == "III";
                }
            }
            return false;
        default: return false;
    }
}

inline LstmRedistributorConfig parse_redistributor(const Config& c, const std::string& sec,
                                                   LstmRedistributorConfig r) {
    r.lstm.cells = c.count(sec, "cells", r.lstm.cells);
    r.lstm.learning_rate = c.num(sec, "lr", r.lstm.learning_rate);
    r.lstm.a_g = c.num(sec, "a_g", r.lstm.a_g);
    r.lstm.a_h = c.num(sec, "a_h", r.lstm.a_h);
    r.lstm.bias_init = c.num(sec, "bias_init", r.lstm.bias_init);
    r.lstm.init_scale = c.num(sec, "init_scale", r.lstm.init_scale);
    r.gate_threshold = c.num(sec, "gate_threshold", r.gate_threshold);
    r.gate_window = c.count(sec, "gate_window", r.gate_window);
    r.use_buffer = c.flag(sec, "lessons_buffer", r.use_buffer);
    r.buffer_capacity = c.count(sec, "buffer_capacity", r.buffer_capacity);
    if (c.has(sec, "input_gate") && c.flag(sec, "input_gate", false)) {
        throw UnsupportedError("input-gated LSTM cells are not implemented");
    }
    return r;
}

inline TraceKind parse_trace(const Config& c, const std::string& sec) {
    const std::string t = c.str(sec, "trace", "accumulating");
    if (t == "accumulating") return TraceKind::Accumulating;
    if (t == "replacing") return TraceKind::Replacing;
    throw ConfigError("unknown trace kind: " + t);
}

inline MethodSpec parse_method(const Config& c, Task task, const std::string& name) {
    if (!allowed(task, name)) {
        throw ConfigError("method " + name + " is not paired with task " + to_string(task));
    }
    const std::string& sec = name;
    MethodSpec m;
    m.name = name;
    const double eps = c.num(sec, "epsilon", 0.2);
    if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("[" + sec + "] epsilon must lie in [0, 1]");

    if (name == "rudder-ema" || name == "rudder-q") {
        m.kind = MethodKind::Rudder;
        m.rudder.estimation = name == "rudder-ema" ? QEstimation::Ema : QEstimation::QLearning;
        m.rudder.ema_rate = c.num(sec, "ema_rate", 0.1);
        m.rudder.alpha = c.num(sec, "alpha", 0.1);
        m.rudder.lambda = c.num(sec, "lambda", 0.0);
        m.rudder.epsilon = eps;
        m.rudder.redistributor = parse_redistributor(c, sec, {});
        const std::string src = c.str(sec, "source", "lstm");
        if (src == "oracle") {
            if (task != Task::GridWorld && task != Task::TraceBack) {
                throw ConfigError("oracle contributions are only defined for gridworld and traceback");
            }
            m.oracle = true;
            if (task == Task::GridWorld) m.oracle_refresh = c.count(sec, "oracle_refresh", 0);
        } else if (src != "lstm") {
            throw ConfigError("unknown contribution source: " + src);
        }
    } else if (name == "mc") {
        m.kind = MethodKind::Mc;
        m.mc.alpha = c.num(sec, "alpha", 0.1);
        m.mc.epsilon = eps;
        m.mc.q_init = c.num(sec, "q_init", 0.0);
    } else if (name == "mcts") {
        m.kind = MethodKind::Mcts;
        m.mcts.exploration = c.num(sec, "exploration", m.mcts.exploration);
        m.mcts.expansion_rollouts = c.count(sec, "rollouts", m.mcts.expansion_rollouts);
        const std::string b = c.str(sec, "backup", "max");
        if (b == "max") {
            m.mcts.backup = MctsBackup::Max;
        } else if (b == "mean") {
            m.mcts.backup = MctsBackup::Mean;
        } else {
            throw ConfigError("unknown mcts backup: " + b);
        }
    } else {
        m.td.alpha = c.num(sec, "alpha", 0.1);
        m.td.epsilon = eps;
        m.td.trace = parse_trace(c, sec);
        m.td.watkins_cut = c.flag(sec, "watkins_cut", true);
        m.td.q_init = c.num(sec, "q_init", 0.0);
        m.kind = MethodKind::Td;
        if (name == "q") {
            m.td.rule = TdRule::QLambda;
            m.td.lambda = 0.0;
        } else if (name == "qlambda") {
            m.td.rule = TdRule::QLambda;
            m.td.lambda = c.num(sec, "lambda", 0.9);
        } else if (name == "sarsalambda") {
            m.td.rule = TdRule::SarsaLambda;
            m.td.lambda = c.num(sec, "lambda", 0.9);
        } else if (name == "expsarsa") {
            m.td.rule = TdRule::ExpectedSarsa;
            m.td.lambda = 0.0;
        } else {
            m.kind = MethodKind::Shaped;
            const auto dash = name.find('-');
            const std::string kind = name.substr(0, dash);
            const std::string v = name.substr(dash + 1);
            m.variant = v == "I" ? PotentialVariant::I : v == "II" ? PotentialVariant::II : PotentialVariant::III;
            m.td.lambda = c.num(sec, "lambda", 0.9);
            if (kind == "rs") {
                m.advice = AdviceKind::RewardShaping;
                m.td.rule = TdRule::QLambda;
            } else if (kind == "lookahead") {
                m.advice = AdviceKind::LookAhead;
                m.td.rule = TdRule::QLambda;
            } else {
                // Look-back advice is paired with an on-policy SARSA learner.
                m.advice = AdviceKind::LookBack;
                m.td.rule = TdRule::SarsaLambda;
            }
            m.potential_rate = c.num(sec, "potential_rate", 0.1);
            m.redistributor = parse_redistributor(c, sec, {});
        }
    }
    return m;
}

}  // namespace detail

/// Task and solved-check settings from the global `task` key and the
/// section named after the task.
inline TaskSpec parse_task_spec(const Config& c) {
    TaskSpec t;
    t.task = parse_task(c.str("", "task", ""));
    const std::string ts = to_string(t.task);
    switch (t.task) {
        case Task::Choice:
            t.choice.charge_prob = c.num(ts, "charge_prob", t.choice.charge_prob);
            t.choice.charge_unit = c.num(ts, "charge_unit", t.choice.charge_unit);
            t.choice.bonus = c.num(ts, "bonus", t.choice.bonus);
            t.solve_rate = c.num(ts, "solve_rate", 0.005);
            t.solve_threshold = c.num(ts, "solve_threshold", 0.8);
            break;
        case Task::TraceBack:
            t.traceback.penalty = c.num(ts, "penalty", t.traceback.penalty);
            t.traceback.distraction = c.num(ts, "distraction", t.traceback.distraction);
            t.traceback.delayed = c.num(ts, "delayed", t.traceback.delayed);
            t.solve_rate = c.num(ts, "solve_rate", 0.005);
            t.solve_threshold = c.num(ts, "solve_threshold", 90.0);
            t.eval_every = c.count(ts, "eval_every", 1);
            break;
        case Task::GridWorld:
            t.gridworld.bomb_probability = c.num(ts, "bomb_probability", t.gridworld.bomb_probability);
            t.gridworld.bomb_reward = c.num(ts, "bomb_reward", t.gridworld.bomb_reward);
            t.gridworld.one_based_time = c.flag(ts, "one_based_time", t.gridworld.one_based_time);
            t.solve_fraction = c.num(ts, "solve_fraction", 0.9);
            t.eval_every = c.count(ts, "eval_every", 100);
            break;
        case Task::ChargeDischarge:
            t.chargedischarge.small = c.num(ts, "small", t.chargedischarge.small);
            t.chargedischarge.large = c.num(ts, "large", t.chargedischarge.large);
            t.solve_fraction = c.num(ts, "solve_fraction", 0.9);
            t.eval_every = c.count(ts, "eval_every", 1);
            break;
    }
    if (t.eval_every == 0) throw ConfigError("eval_every must be positive");
    return t;
}

/// Calls `f(env)` with the environment of `t` at `delay`.
template <class F>
decltype(auto) with_task_env(const TaskSpec& t, int delay, F&& f) {
    switch (t.task) {
        case Task::Choice: {
            ChoiceConfig c = t.choice;
            c.horizon = delay;
            return f(envs::Choice(c));
        }
        case Task::TraceBack: {
            TraceBackConfig c = t.traceback;
            c.delay = delay;
            return f(envs::TraceBack(c));
        }
        case Task::GridWorld: {
            GridWorldConfig c = t.gridworld;
            c.delay = delay;
            return f(envs::GridWorld(c));
        }
        default: {
            ChargeDischargeConfig c = t.chargedischarge;
            c.horizon = delay;
            return f(envs::charge_discharge(c));
        }
    }
}

/// Reads and validates an experiment. Invalid pairings and unknown keys are
/// configuration errors raised before any trial runs.
inline ExperimentConfig parse_experiment(const Config& c) {
    ExperimentConfig e;
    for (const auto& d : c.list("", "delays")) {
        try {
            e.delays.push_back(std::stoi(d));
        } catch (const std::exception&) {
            throw ConfigError("bad delay: " + d);
        }
    }
    if (e.delays.empty()) throw ConfigError("delays must list at least one delay");
    e.trials = c.count("", "trials", e.trials);
    e.seed = c.count("", "seed", e.seed);
    e.episode_cap = c.count("", "episode_cap", e.episode_cap);
    e.jobs = c.count("", "jobs", e.jobs);
    e.metrics_trials = c.count("", "metrics_trials", 0);
    if (e.trials == 0 || e.episode_cap == 0) throw ConfigError("trials and episode_cap must be positive");

    e.task = parse_task_spec(c);
    const TaskSpec& t = e.task;

    const auto names = c.list("", "methods");
    if (names.empty()) throw ConfigError("methods must list at least one method");
    for (const auto& n : names) e.methods.push_back(detail::parse_method(c, t.task, n));
    for (int d : e.delays) {
        if (d < 1) throw ConfigError("delays must be positive");
        with_task_env(t, d, [](auto&&) {});
    }
    // Sections of known but unselected methods may stay unread.
    std::vector<std::string> idle;
    for (const char* n : {"rudder-ema", "rudder-q", "mc", "q", "qlambda", "sarsalambda", "expsarsa", "mcts"}) {
        if (std::find(names.begin(), names.end(), n) == names.end()) idle.emplace_back(n);
    }
    for (const char* k : {"rs-", "lookahead-", "lookback-"}) {
        for (const char* v : {"I", "II", "III"}) {
            const std::string n = std::string(k) + v;
            if (std::find(names.begin(), names.end(), n) == names.end()) idle.push_back(n);
        }
    }
    c.check_all_used(idle);
    return e;
}

// --- seeding ---------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed of one trial, independent of scheduling order.
inline std::uint64_t trial_seed(std::uint64_t base, const std::string& cell, std::size_t trial) {
    return splitmix64(splitmix64(base ^ fnv1a(cell)) + static_cast<std::uint64_t>(trial));
}

// --- learners behind one interface ---------------------------------------------------------

struct EpisodeSummary {
    double ret = 0.0;
    ActionId first_action = 0;
    double loss = 0.0;
};

template <Environment Env>
class Learner {
public:
    virtual ~Learner() = default;
    virtual EpisodeSummary episode(Rng& rng) = 0;
    /// Greedy policy as pi(a|s), ties sharing the mass.
    [[nodiscard]] virtual PolicyFn greedy() const = 0;
};

namespace detail {

inline EpisodeSummary summarize(const EpisodeTrace& tr, double loss = 0.0) {
    return {episode_return(tr), tr.actions.front(), loss};
}

template <Environment Env>
class RudderLearner final : public Learner<Env> {
public:
    template <class... Args>
    explicit RudderLearner(Args&&... args) : agent_(std::forward<Args>(args)...) {}
    EpisodeSummary episode(Rng& rng) override {
        const EpisodeTrace tr = agent_.episode(rng);
        return summarize(tr, agent_.last_loss());
    }
    [[nodiscard]] PolicyFn greedy() const override { return greedy_policy_fn(agent_.q()); }

private:
    RudderAgent<Env> agent_;
};

template <Environment Env>
class TdWrap final : public Learner<Env> {
public:
    TdWrap(const Env& env, TdConfig cfg) : td_(env, cfg) {}
    EpisodeSummary episode(Rng& rng) override { return summarize(td_.episode(rng)); }
    [[nodiscard]] PolicyFn greedy() const override { return greedy_policy_fn(td_.q()); }

private:
    TdLearner<Env> td_;
};

template <Environment Env>
class McWrap final : public Learner<Env> {
public:
    McWrap(const Env& env, McConfig cfg) : mc_(env, cfg) {}
    EpisodeSummary episode(Rng& rng) override { return summarize(mc_.episode(rng)); }
    [[nodiscard]] PolicyFn greedy() const override { return greedy_policy_fn(mc_.q()); }

private:
    McLearner<Env> mc_;
};

/// TD learner whose shaping/advice potential is refreshed from an LSTM
/// redistribution after every episode.
template <DeltaEncodedEnvironment Env>
class ShapedLearner final : public Learner<Env> {
public:
    ShapedLearner(const Env& env, const MethodSpec& m, Rng& rng)
        : td_(env, m.td),
          lstm_(env, env.reward_scale(), m.redistributor, rng),
          phi_(env.state_count(), env.action_count(), m.variant, m.potential_rate),
          advice_(m.advice) {
        td_.set_advice(&phi_, m.advice);
    }
    EpisodeSummary episode(Rng& rng) override {
        const EpisodeTrace tr = td_.episode(rng);
        const Decomposition d = lstm_.process(tr, rng);
        if (d.active) phi_.observe(tr, d.h, d.g);
        return summarize(tr, d.loss);
    }
    [[nodiscard]] PolicyFn greedy() const override {
        if (advice_ != AdviceKind::LookAhead) return greedy_policy_fn(td_.q());
        // Look-ahead acts greedily on q + Phi.
        const TabularQ* q = &td_.q();
        const Potential* phi = &phi_;
        return [q, phi](StateId s, ActionId a) {
            std::vector<double> row(q->action_count());
            for (ActionId b = 0; b < row.size(); ++b) row[b] = q->q(s, b) + phi->state_action(s, b);
            return epsilon_greedy_prob(row, 0.0, a);
        };
    }

private:
    TdLearner<Env> td_;
    LstmRedistributor<Env> lstm_;
    Potential phi_;
    AdviceKind advice_;
};

template <Environment Env>
class MctsWrap final : public Learner<Env> {
public:
    MctsWrap(const Env& env, MctsConfig cfg) : env_(env), mcts_(env, cfg) {}
    EpisodeSummary episode(Rng& rng) override { return {mcts_.episode(rng), 0, 0.0}; }
    [[nodiscard]] PolicyFn greedy() const override {
        const MctsTree<Env>* tree = &mcts_.tree();
        const std::size_t A = env_.action_count();
        return [tree, A](StateId s, ActionId a) {
            const MctsNode* node = tree->find(s);
            std::vector<double> row(A, -std::numeric_limits<double>::infinity());
            if (node) {
                for (ActionId b = 0; b < A; ++b) {
                    if (node->edges[b].visits > 0) row[b] = node->edges[b].value;
                }
            }
            if (!node || *std::max_element(row.begin(), row.end()) == -std::numeric_limits<double>::infinity()) {
                return 1.0 / static_cast<double>(A);
            }
            return epsilon_greedy_prob(row, 0.0, a);
        };
    }

private:
    const Env& env_;
    MctsLearner<Env> mcts_;
};

}  // namespace detail

/// Contributions known from the task model, used by `source = oracle`.
/// Trace-Back credits the step that completes the opening.
inline OracleContributions trace_back_oracle(const envs::TraceBack& env) {
    const double delayed = env.config().delayed;
    return [&env, delayed](const EpisodeTrace& tr) {
        std::vector<double> h(tr.size(), 0.0);
        for (std::size_t t = 0; t < tr.size(); ++t) {
            if (env.completes_opening(tr.states[t], tr.actions[t])) h[t] = delayed;
        }
        return h;
    };
}

namespace detail {

/// Grid World RUDDER with q-difference redistribution. With refresh = 0 the
/// q is the optimal one; otherwise it is that of the agent's own
/// epsilon-greedy policy, recomputed exactly every `refresh` episodes.
class GridOracleLearner final : public Learner<envs::GridWorld> {
public:
    GridOracleLearner(const envs::GridWorld& env, const RudderConfig& cfg, std::size_t refresh)
        : env_(env), eps_(cfg.epsilon), refresh_(refresh),
          agent_(env, cfg, [this](const EpisodeTrace& tr) { return contributions_oracle_on_top(q_pi_, tr); }) {
        if (refresh_ == 0) q_pi_ = backward_induction(env_);
    }

    EpisodeSummary episode(Rng& rng) override {
        if (refresh_ > 0 && count_++ % refresh_ == 0) {
            const TabularQ& q = agent_.q();
            const double eps = eps_;
            q_pi_ = backward_induction(env_, [&q, eps](StateId s, ActionId a) {
                return epsilon_greedy_prob(q.row(s), eps, a);
            });
        }
        return summarize(agent_.episode(rng));
    }
    [[nodiscard]] PolicyFn greedy() const override { return greedy_policy_fn(agent_.q()); }

private:
    const envs::GridWorld& env_;
    double eps_;
    std::size_t refresh_;
    std::size_t count_ = 0;
    ExactQ q_pi_;
    RudderAgent<envs::GridWorld> agent_;
};

}  // namespace detail

template <DeltaEncodedEnvironment Env>
std::unique_ptr<Learner<Env>> make_learner(const Env& env, const MethodSpec& m, Rng& rng) {
    switch (m.kind) {
        case MethodKind::Rudder:
            if (m.oracle) {
                OracleContributions oracle;
                if constexpr (std::is_same_v<Env, envs::GridWorld>) {
                    return std::make_unique<detail::GridOracleLearner>(env, m.rudder, m.oracle_refresh);
                } else if constexpr (std::is_same_v<Env, envs::TraceBack>) {
                    oracle = trace_back_oracle(env);
                } else {
                    throw ConfigError("no oracle contributions for this task");
                }
                return std::make_unique<detail::RudderLearner<Env>>(env, m.rudder, std::move(oracle));
            }
            return std::make_unique<detail::RudderLearner<Env>>(env, env.reward_scale(), m.rudder, rng);
        case MethodKind::Mc: return std::make_unique<detail::McWrap<Env>>(env, m.mc);
        case MethodKind::Td: return std::make_unique<detail::TdWrap<Env>>(env, m.td);
        case MethodKind::Shaped: return std::make_unique<detail::ShapedLearner<Env>>(env, m, rng);
        case MethodKind::Mcts: return std::make_unique<detail::MctsWrap<Env>>(env, m.mcts);
    }
    throw ConfigError("unknown method kind");
}

// --- trials -----------------------------------------------------------------------------

struct TrialResult {
    std::string method;
    int delay = 0;
    std::size_t trial = 0;
    std::uint64_t seed = 0;
    double episodes = 0.0;  ///< learning time, or the cap when censored
    bool censored = false;
};

/// Everything shared by the trials of one (task, delay) pair.
template <EnumerableEnvironment Env>
struct Cell {
    Env env;
    TaskSpec spec;
    double optimal = 0.0;  ///< optimal expected return, for fraction-based checks
};

template <class Env>
Cell<Env> make_cell(Env env, const TaskSpec& spec) {
    Cell<Env> c{std::move(env), spec, 0.0};
    if (spec.task == Task::GridWorld || spec.task == Task::ChargeDischarge) {
        c.optimal = backward_induction(c.env).initial_value;
    }
    return c;
}

/// Runs one learner until the task's solved check fires or the cap is hit.
template <EnumerableEnvironment Env>
TrialResult run_trial(const Cell<Env>& cell, const MethodSpec& m, std::uint64_t seed, std::size_t cap,
                      std::ostream* metrics = nullptr) {
    Rng rng(seed);
    auto learner = make_learner(cell.env, m, rng);
    Ema ema(cell.spec.solve_rate, 0.0);
    if (metrics) write_metrics_header(*metrics);
    TrialResult r;
    r.method = m.name;
    r.seed = seed;
    for (std::size_t ep = 1; ep <= cap; ++ep) {
        const EpisodeSummary s = learner->episode(rng);
        bool solved = false;
        switch (cell.spec.task) {
            case Task::Choice:
                solved = ema.add(s.first_action == envs::Choice::Plus ? 1.0 : 0.0) >= cell.spec.solve_threshold;
                break;
            case Task::TraceBack:
                if (ep % cell.spec.eval_every == 0) {
                    ema.add(evaluate_policy(cell.env, learner->greedy()));
                }
                solved = ema.value() >= cell.spec.solve_threshold;
                break;
            default:
                if (ep % cell.spec.eval_every == 0) {
                    solved = solved_check(evaluate_policy(cell.env, learner->greedy()), cell.optimal,
                                          cell.spec.solve_fraction);
                }
                break;
        }
        if (metrics) write_metrics_row(*metrics, ep, s.ret, s.loss, solved);
        if (solved) {
            r.episodes = static_cast<double>(ep);
            return r;
        }
    }
    r.episodes = static_cast<double>(cap);
    r.censored = true;
    return r;
}

// --- scheduling ------------------------------------------------------------------------

/// Runs `jobs` closures over `threads` workers; each closure writes its own slot.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(count, 1));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!error) error = std::current_exception();
                next = count;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
}

inline std::string cell_name(Task task, const std::string& method, int delay) {
    return std::string(to_string(task)) + "/" + method + "/" + std::to_string(delay);
}

namespace detail {

template <class Env>
void run_cells_for(const ExperimentConfig& e, int delay, Env env, std::vector<TrialResult>& out,
                   const std::string& metrics_dir) {
    const Cell<Env> cell = make_cell(std::move(env), e.task);
    const std::size_t M = e.methods.size();
    std::vector<TrialResult> res(M * e.trials);
    parallel_for(res.size(), e.jobs, [&](std::size_t i) {
        const MethodSpec& m = e.methods[i / e.trials];
        const std::size_t trial = i % e.trials;
        const std::uint64_t seed = trial_seed(e.seed, cell_name(e.task.task, m.name, delay), trial);
        std::unique_ptr<std::ofstream> mf;
        if (!metrics_dir.empty() && trial < e.metrics_trials) {
            mf = std::make_unique<std::ofstream>(metrics_dir + "/" + std::string(to_string(e.task.task)) + "_" +
                                                 m.name + "_d" + std::to_string(delay) + "_t" +
                                                 std::to_string(trial) + ".csv");
        }
        TrialResult r = run_trial(cell, m, seed, e.episode_cap, mf.get());
        r.delay = delay;
        r.trial = trial;
        res[i] = std::move(r);
    });
    out.insert(out.end(), res.begin(), res.end());
}

}  // namespace detail

/// Runs every (delay, method, trial). Results are ordered by delay, method
/// (config order) and trial regardless of the number of threads.
inline std::vector<TrialResult> run_trials(const ExperimentConfig& e, const std::string& metrics_dir = "") {
    std::vector<TrialResult> out;
    for (int d : e.delays) {
        with_task_env(e.task, d, [&](auto env) { detail::run_cells_for(e, d, std::move(env), out, metrics_dir); });
    }
    return out;
}

// --- aggregation and output -----------------------------------------------------------------

inline void write_trials_csv(std::ostream& os, const std::vector<TrialResult>& rs) {
    os << "method,delay,trial,seed,episodes,censored\n";
    for (const auto& r : rs) {
        os << r.method << ',' << r.delay << ',' << r.trial << ',' << r.seed << ',' << r.episodes << ','
           << (r.censored ? 1 : 0) << '\n';
    }
}

/// Parses the output of write_trials_csv.
inline std::vector<TrialResult> read_trials_csv(std::istream& is) {
    std::vector<TrialResult> out;
    std::string line;
    if (!std::getline(is, line) || line.rfind("method,", 0) != 0) {
        throw ConfigError("trials CSV needs the method,delay,trial,seed,episodes,censored header");
    }
    while (std::getline(is, line)) {
        if (Config::trim(line).empty()) continue;
        std::stringstream ss(line);
        std::string f[6];
        for (auto& x : f) {
            if (!std::getline(ss, x, ',')) throw ConfigError("short trials CSV row: " + line);
        }
        try {
            TrialResult r;
            r.method = f[0];
            r.delay = std::stoi(f[1]);
            r.trial = std::stoul(f[2]);
            r.seed = std::stoull(f[3]);
            r.episodes = std::stod(f[4]);
            r.censored = f[5] == "1";
            out.push_back(r);
        } catch (const std::exception&) {
            throw ConfigError("malformed trials CSV row: " + line);
        }
    }
    return out;
}

/// Per (method, delay): median (censored log-normal fit when needed),
/// 40/60% quantiles, mean, and the two-sided Wilcoxon p against `reference`
/// paired by trial index. Rows are sorted by method then delay.
inline std::vector<StatsRow> aggregate(const std::vector<TrialResult>& rs, const std::string& reference) {
    std::map<std::pair<std::string, int>, std::map<std::size_t, TrialResult>> groups;
    for (const auto& r : rs) groups[{r.method, r.delay}][r.trial] = r;
    std::vector<StatsRow> out;
    for (const auto& [key, trials] : groups) {
        StatsRow row;
        row.method = key.first;
        row.delay = static_cast<std::size_t>(key.second);
        std::vector<double> eps;
        std::vector<LearningTime> lt;
        for (const auto& [i, r] : trials) {
            eps.push_back(r.episodes);
            lt.push_back({r.episodes, r.censored});
            row.censored += r.censored ? 1 : 0;
        }
        row.q40 = quantile(eps, 0.4);
        row.q60 = quantile(eps, 0.6);
        row.mean = mean(eps);
        if (row.censored == 0) {
            row.median = quantile(eps, 0.5);
        } else if (2 * (eps.size() - row.censored) > eps.size()) {
            row.median = censored_lognormal_median(lt).median;
        } else {
            row.median = std::numeric_limits<double>::quiet_NaN();
        }
        auto ref = groups.find({reference, key.second});
        if (!reference.empty() && key.first != reference && ref != groups.end()) {
            std::vector<double> x;
            std::vector<double> y;
            for (const auto& [i, r] : trials) {
                auto it = ref->second.find(i);
                if (it == ref->second.end()) continue;
                x.push_back(it->second.episodes);
                y.push_back(r.episodes);
            }
            try {
                row.p_vs_rudder = wilcoxon_signed_rank(x, y).p_two_sided;
            } catch (const ConfigError&) {
                row.p_vs_rudder = 1.0;
            }
        }
        out.push_back(row);
    }
    return out;
}

/// First method whose name starts with "rudder", or empty.
inline std::string reference_method(const std::vector<TrialResult>& rs) {
    std::string best;
    for (const auto& r : rs) {
        if (r.method.rfind("rudder", 0) == 0 && (best.empty() || r.method < best)) best = r.method;
    }
    return best;
}

/// Learning-time curve per method over delays: median with 40/60% bands.
inline void emit_plot_data(std::ostream& os, const std::vector<StatsRow>& rows) {
    os << "method,delay,median,q40,q60,log_scale\n";
    for (const auto& r : rows) {
        os << r.method << ',' << r.delay << ',' << r.median << ',' << r.q40 << ',' << r.q60 << ",1\n";
    }
}

/// Writes trials.csv, stats.csv and curve.csv into `dir`.
inline std::vector<StatsRow> write_experiment_outputs(const std::string& dir, const std::vector<TrialResult>& rs) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir + "/trials.csv");
        write_trials_csv(f, rs);
    }
    const auto rows = aggregate(rs, reference_method(rs));
    {
        std::ofstream f(dir + "/stats.csv");
        write_stats_header(f);
        for (const auto& r : rows) write_stats_row(f, r);
    }
    {
        std::ofstream f(dir + "/curve.csv");
        emit_plot_data(f, rows);
    }
    return rows;
}

/// Full pipeline: trials, then outputs in `dir`.
inline std::vector<StatsRow> run_experiment(const ExperimentConfig& e, const std::string& dir) {
    std::string metrics_dir;
    if (e.metrics_trials > 0) {
        metrics_dir = dir + "/metrics";
        std::filesystem::create_directories(metrics_dir);
    }
    return write_experiment_outputs(dir, run_trials(e, metrics_dir));
}

}  // namespace rudder
