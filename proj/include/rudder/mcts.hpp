#pragma once

// Monte Carlo tree search with a UCB1 tree policy. Nodes are keyed by state
// (time is part of the state, so the tree is a DAG over time layers). A node
// seen for the first time is valued by the mean return of uniform-random
// rollouts from it. Backups either propagate the best child value (max) or
// the sampled return (mean).

#include "rudder/core.hpp"

#include <cmath>
#include <limits>
#include <unordered_map>
#include <vector>

namespace rudder {

enum class MctsBackup { Max, Mean };

struct MctsConfig {
    double exploration = 1.4142135623730951;  // sqrt(2)
    std::size_t expansion_rollouts = 100;
    MctsBackup backup = MctsBackup::Max;
};

struct MctsEdge {
    std::size_t visits = 0;
    double value = 0.0;  ///< running mean of backed-up targets
};

struct MctsNode {
    std::size_t visits = 0;  ///< expansion visit + all child visits
    double initial = 0.0;    ///< rollout estimate from the expansion
    std::vector<MctsEdge> edges;

    [[nodiscard]] double value(MctsBackup mode) const {
        bool any = false;
        double best = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& e : edges) {
            if (e.visits > 0) {
                any = true;
                best = std::max(best, e.value);
                sum += e.value * static_cast<double>(e.visits);
                n += e.visits;
            }
        }
        if (!any) {
            return initial;
        }
        return mode == MctsBackup::Max ? best : sum / static_cast<double>(n);
    }
};

/// UCB1 score; an unvisited child scores +infinity.
inline double ucb1(double mean, std::size_t child_visits, std::size_t parent_visits, double c) {
    if (child_visits == 0) {
        return std::numeric_limits<double>::infinity();
    }
    return mean + c * std::sqrt(std::log(static_cast<double>(parent_visits)) / static_cast<double>(child_visits));
}

template <Environment Env>
class MctsTree {
public:
    MctsTree(const Env& env, MctsConfig cfg = {}) : env_(env), cfg_(cfg) {}

    [[nodiscard]] const MctsConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }
    [[nodiscard]] const MctsNode* find(StateId s) const {
        auto it = nodes_.find(s);
        return it == nodes_.end() ? nullptr : &it->second;
    }

    /// One selection / expansion / rollout / backup pass from `root` at
    /// decision index `t`. Returns the realised return of the simulated path.
    double simulate(StateId root, std::size_t t, Rng& rng) {
        struct Hop {
            StateId s;
            ActionId a;
            double reward;
        };
        std::vector<Hop> path;
        StateId s = root;
        double tail = 0.0;
        bool done = t >= env_.length();
        while (!done) {
            auto it = nodes_.find(s);
            if (it == nodes_.end()) {
                MctsNode node;
                node.edges.resize(env_.action_count());
                node.initial = rollout_mean(s, t, rng);
                node.visits = 1;
                tail = node.initial;
                nodes_.emplace(s, std::move(node));
                break;
            }
            const ActionId a = select(it->second, cfg_.exploration, rng);
            const Step st = env_.step(s, a, rng);
            path.push_back({s, a, st.reward});
            s = st.next;
            done = st.done;
            ++t;
        }

        // Walk back, updating edges with r + value(successor).
        double ret = tail;
        double succ_value = tail;
        for (std::size_t i = path.size(); i-- > 0;) {
            const Hop& h = path[i];
            ret += h.reward;
            MctsNode& node = nodes_.at(h.s);
            MctsEdge& e = node.edges[h.a];
            const double target = cfg_.backup == MctsBackup::Max ? h.reward + succ_value : ret;
            ++e.visits;
            e.value += (target - e.value) / static_cast<double>(e.visits);
            ++node.visits;
            succ_value = node.value(cfg_.backup);
        }
        return ret;
    }

    /// Best action at `s` with exploration 0; random when `s` is unknown.
    ActionId greedy(StateId s, Rng& rng) const {
        auto it = nodes_.find(s);
        if (it == nodes_.end()) {
            return std::uniform_int_distribution<ActionId>(0, env_.action_count() - 1)(rng);
        }
        return select(it->second, 0.0, rng);
    }

private:
    ActionId select(const MctsNode& node, double c, Rng& rng) const {
        double best = -std::numeric_limits<double>::infinity();
        std::vector<ActionId> ties;
        for (ActionId a = 0; a < node.edges.size(); ++a) {
            const auto& e = node.edges[a];
            // Greedy selection (c = 0) still tries unvisited actions last.
            const double score = c > 0.0 ? ucb1(e.value, e.visits, node.visits, c)
                                         : (e.visits > 0 ? e.value : -std::numeric_limits<double>::infinity());
            if (score > best) {
                best = score;
                ties.assign(1, a);
            } else if (score == best) {
                ties.push_back(a);
            }
        }
        if (ties.size() == 1) {
            return ties.front();
        }
        return ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
    }

    double rollout_mean(StateId s0, std::size_t t0, Rng& rng) const {
        if (cfg_.expansion_rollouts == 0) {
            return 0.0;
        }
        std::uniform_int_distribution<ActionId> pick(0, env_.action_count() - 1);
        double sum = 0.0;
        for (std::size_t k = 0; k < cfg_.expansion_rollouts; ++k) {
            StateId s = s0;
            for (std::size_t t = t0; t < env_.length(); ++t) {
                const Step st = env_.step(s, pick(rng), rng);
                sum += st.reward;
                s = st.next;
                if (st.done) {
                    break;
                }
            }
        }
        return sum / static_cast<double>(cfg_.expansion_rollouts);
    }

    const Env& env_;
    MctsConfig cfg_;
    std::unordered_map<StateId, MctsNode> nodes_;
};

/// Runs `budget` simulations from `root` and returns the greedy action.
template <Environment Env>
ActionId mcts_search(const Env& env, StateId root, std::size_t budget, Rng& rng, MctsConfig cfg = {}) {
    MctsTree<Env> tree(env, cfg);
    for (std::size_t i = 0; i < budget; ++i) {
        tree.simulate(root, 0, rng);
    }
    return tree.greedy(root, rng);
}

}  // namespace rudder
