#pragma once

// Time-bomb grid world with a probabilistic delayed reward.
//
// A 31x31 grid, bomb at (30,15), start d rows above it. Each move earns
// c*t*h, where h is the distance of the new cell to the bomb and c depends
// on whether the move brought the agent closer (-0.09) or farther (+0.1).
// After floor(1.5 d) moves, an agent that has stepped on the bomb receives
// 1000 with probability 0.5.
//
// Distance is the L1 ("Manhattan") distance between grid coordinates.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <span>
#include <vector>

namespace rudder::envs {

struct GridWorldConfig {
    int delay = 10;
    int size = 31;
    int bomb_row = 30;
    int bomb_col = 15;
    double c_toward = -0.09;
    double c_away = 0.1;
    double bomb_reward = 1000.0;
    double bomb_probability = 0.5;
    /// Use t = 1 for the first move in c*t*h (otherwise t = 0).
    bool one_based_time = true;
};

class GridWorld {
public:
    enum Direction : ActionId { Up = 0, Down = 1, Left = 2, Right = 3 };

    explicit GridWorld(GridWorldConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.delay < 1 || cfg_.delay > 30) {
            throw ConfigError("grid world delay must lie in [1, 30]");
        }
        if (start_row() < 0 || start_row() >= cfg_.size) {
            throw ConfigError("grid world start is off the grid");
        }
        length_ = static_cast<std::size_t>(std::floor(1.5 * cfg_.delay));
        if (length_ == 0) {
            length_ = 1;
        }
    }

    [[nodiscard]] const GridWorldConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] int start_row() const noexcept { return cfg_.bomb_row - cfg_.delay; }
    [[nodiscard]] int start_col() const noexcept { return cfg_.bomb_col; }

    [[nodiscard]] std::size_t length() const noexcept { return length_; }
    [[nodiscard]] std::size_t action_count() const noexcept { return 4; }
    [[nodiscard]] std::size_t state_count() const noexcept {
        return (length_ + 1) * 2 * cells();
    }

    struct Decoded {
        std::size_t t;
        bool visited;
        int row;
        int col;
    };

    [[nodiscard]] StateId encode(std::size_t t, bool visited, int row, int col) const noexcept {
        return ((t * 2 + (visited ? 1 : 0)) * static_cast<std::size_t>(cfg_.size) + static_cast<std::size_t>(row)) *
                   static_cast<std::size_t>(cfg_.size) +
               static_cast<std::size_t>(col);
    }

    [[nodiscard]] Decoded decode(StateId s) const noexcept {
        const auto n = static_cast<std::size_t>(cfg_.size);
        const int col = static_cast<int>(s % n);
        s /= n;
        const int row = static_cast<int>(s % n);
        s /= n;
        return {s / 2, (s % 2) == 1, row, col};
    }

    [[nodiscard]] int distance(int row, int col) const noexcept {
        return std::abs(row - cfg_.bomb_row) + std::abs(col - cfg_.bomb_col);
    }

    StateId reset(Rng& /*rng*/) const { return encode(0, false, start_row(), start_col()); }

    std::vector<std::pair<StateId, double>> initial_distribution() const {
        return {{encode(0, false, start_row(), start_col()), 1.0}};
    }

    Step step(StateId s, ActionId a, Rng& rng) const {
        const Move m = move(s, a);
        double reward = m.immediate;
        if (m.done && m.visited) {
            std::bernoulli_distribution hit(cfg_.bomb_probability);
            if (hit(rng)) {
                reward += cfg_.bomb_reward;
            }
        }
        return {m.next, reward, m.done};
    }

    std::vector<Outcome> outcomes(StateId s, ActionId a) const {
        const Move m = move(s, a);
        if (m.done && m.visited) {
            return {{m.next, m.immediate + cfg_.bomb_reward, cfg_.bomb_probability, true},
                    {m.next, m.immediate, 1.0 - cfg_.bomb_probability, true}};
        }
        return {{m.next, m.immediate, 1.0, m.done}};
    }

    /// Immediate c*t*h reward of a move from `s`, without the bomb payoff.
    [[nodiscard]] double immediate_reward(StateId s, ActionId a) const { return move(s, a).immediate; }

    /// Largest reward magnitude, used to normalise return predictions.
    [[nodiscard]] double reward_scale() const noexcept { return cfg_.bomb_reward; }

    // Delta encoding: a_t (4), a_{t-1} or none (5), row/col change, bomb
    // distance change, and two event bits: the visited flag toggled between
    // s_{t-1} and s_t, and a_t stepping onto the bomb for the first time.
    [[nodiscard]] std::size_t delta_dim() const noexcept { return 14; }

    void encode_delta(bool first, StateId ps, ActionId pa, StateId s, ActionId a, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        const Decoded cur = decode(s);
        out[a] = 1.0;
        if (first) {
            out[4 + 4] = 1.0;
        } else {
            const Decoded prev = decode(ps);
            out[4 + pa] = 1.0;
            out[9] = static_cast<double>(cur.row - prev.row);
            out[10] = static_cast<double>(cur.col - prev.col);
            out[11] = static_cast<double>(distance(cur.row, cur.col) - distance(prev.row, prev.col)) * 0.5;
            out[12] = (cur.visited != prev.visited) ? 1.0 : 0.0;
        }
        const Move m = move(s, a);
        out[13] = (m.visited && !cur.visited) ? 1.0 : 0.0;
    }

private:
    struct Move {
        StateId next;
        double immediate;
        bool visited;
        bool done;
    };

    [[nodiscard]] std::size_t cells() const noexcept {
        return static_cast<std::size_t>(cfg_.size) * static_cast<std::size_t>(cfg_.size);
    }

    [[nodiscard]] Move move(StateId s, ActionId a) const {
        const Decoded d = decode(s);
        int row = d.row;
        int col = d.col;
        switch (a) {
            case Up: row -= 1; break;
            case Down: row += 1; break;
            case Left: col -= 1; break;
            case Right: col += 1; break;
            default: throw ConfigError("grid world action out of range");
        }
        if (row < 0 || row >= cfg_.size || col < 0 || col >= cfg_.size) {
            row = d.row;
            col = d.col;
        }
        const int h_old = distance(d.row, d.col);
        const int h_new = distance(row, col);
        double c = 0.0;
        if (h_new < h_old) {
            c = cfg_.c_toward;
        } else if (h_new > h_old) {
            c = cfg_.c_away;
        }
        const double time = static_cast<double>(d.t + (cfg_.one_based_time ? 1 : 0));
        const bool visited = d.visited || h_new == 0;
        const bool done = d.t + 1 == length_;
        return {encode(d.t + 1, visited, row, col), c * time * static_cast<double>(h_new), visited, done};
    }

    GridWorldConfig cfg_;
    std::size_t length_ = 1;
};

}  // namespace rudder::envs
