#pragma once

// Trace-Back: a square grid where only the first two moves matter.
//
// For delay n the grid is floor(3n/4) wide, the start is
// (floor(3n/8), floor(3n/8)) and an episode has n moves. Moving up, then
// right, costs 50 on the second move and pays 150 with the last move
// (return 100); any other opening pays 50 on the second move and nothing
// later (return 50). The first two moves are deterministic; later moves land
// uniformly on one of the four neighbour-or-clamped cells regardless of the
// action. The state carries position, time and the "owed 150" flag.

#include "rudder/core.hpp"

#include <algorithm>
#include <span>
#include <vector>

namespace rudder::envs {

struct TraceBackConfig {
    int delay = 20;
    double penalty = -50.0;
    double distraction = 50.0;
    double delayed = 150.0;
};

class TraceBack {
public:
    enum Direction : ActionId { Up = 0, Down = 1, Left = 2, Right = 3 };

    explicit TraceBack(TraceBackConfig cfg = {}) : cfg_(cfg) {
        if (cfg_.delay < 3) {
            throw ConfigError("trace-back needs a delay of at least 3");
        }
        grid_ = (3 * cfg_.delay) / 4;
        start_ = (3 * cfg_.delay) / 8;
        if (grid_ < 4) {
            throw ConfigError("trace-back grid is too small for the opening moves");
        }
    }

    [[nodiscard]] const TraceBackConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] int grid_size() const noexcept { return grid_; }
    [[nodiscard]] int start() const noexcept { return start_; }

    [[nodiscard]] std::size_t length() const noexcept { return static_cast<std::size_t>(cfg_.delay); }
    [[nodiscard]] std::size_t action_count() const noexcept { return 4; }
    [[nodiscard]] std::size_t state_count() const noexcept { return (length() + 1) * 2 * cells(); }

    struct Decoded {
        std::size_t t;
        bool flag;
        int x;
        int y;
    };

    [[nodiscard]] StateId encode(std::size_t t, bool flag, int x, int y) const noexcept {
        const auto g = static_cast<std::size_t>(grid_);
        return ((t * 2 + (flag ? 1 : 0)) * g + static_cast<std::size_t>(x)) * g + static_cast<std::size_t>(y);
    }

    [[nodiscard]] Decoded decode(StateId s) const noexcept {
        const auto g = static_cast<std::size_t>(grid_);
        const int y = static_cast<int>(s % g);
        s /= g;
        const int x = static_cast<int>(s % g);
        s /= g;
        return {s / 2, (s % 2) == 1, x, y};
    }

    StateId reset(Rng& /*rng*/) const { return encode(0, false, start_, start_); }

    std::vector<std::pair<StateId, double>> initial_distribution() const {
        return {{encode(0, false, start_, start_), 1.0}};
    }

    /// The opening that earns the delayed reward: `a` taken in `s` sets the flag.
    [[nodiscard]] bool completes_opening(StateId s, ActionId a) const noexcept {
        const Decoded d = decode(s);
        return d.t == 1 && !d.flag && d.x == start_ && d.y == start_ + 1 && a == Right;
    }

    Step step(StateId s, ActionId a, Rng& rng) const {
        check_action(a);
        const Decoded d = decode(s);
        if (d.t < 2) {
            const auto [x, y] = shift(d.x, d.y, a);
            return transition(s, a, x, y);
        }
        std::uniform_int_distribution<ActionId> dir(0, 3);
        const auto [x, y] = shift(d.x, d.y, dir(rng));
        return transition(s, a, x, y);
    }

    std::vector<Outcome> outcomes(StateId s, ActionId a) const {
        check_action(a);
        const Decoded d = decode(s);
        if (d.t < 2) {
            const auto [x, y] = shift(d.x, d.y, a);
            const Step st = transition(s, a, x, y);
            return {{st.next, st.reward, 1.0, st.done}};
        }
        std::vector<Outcome> out;
        for (ActionId dir = 0; dir < 4; ++dir) {
            const auto [x, y] = shift(d.x, d.y, dir);
            const Step st = transition(s, a, x, y);
            auto it = std::find_if(out.begin(), out.end(), [&](const Outcome& o) { return o.next == st.next; });
            if (it != out.end()) {
                it->probability += 0.25;
            } else {
                out.push_back({st.next, st.reward, 0.25, st.done});
            }
        }
        return out;
    }

    [[nodiscard]] double reward_scale() const noexcept { return cfg_.delayed; }

    // Delta encoding: a_t (4), a_{t-1} or none (5), position change (2), the
    // flag toggled between s_{t-1} and s_t, and a_t completing the opening.
    [[nodiscard]] std::size_t delta_dim() const noexcept { return 13; }

    void encode_delta(bool first, StateId ps, ActionId pa, StateId s, ActionId a, std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        const Decoded cur = decode(s);
        out[a] = 1.0;
        if (first) {
            out[4 + 4] = 1.0;
        } else {
            const Decoded prev = decode(ps);
            out[4 + pa] = 1.0;
            out[9] = static_cast<double>(cur.x - prev.x);
            out[10] = static_cast<double>(cur.y - prev.y);
            out[11] = (cur.flag != prev.flag) ? 1.0 : 0.0;
        }
        out[12] = completes_opening(s, a) ? 1.0 : 0.0;
    }

private:
    [[nodiscard]] std::size_t cells() const noexcept {
        return static_cast<std::size_t>(grid_) * static_cast<std::size_t>(grid_);
    }

    static void check_action(ActionId a) {
        if (a >= 4) {
            throw ConfigError("trace-back action out of range");
        }
    }

    [[nodiscard]] std::pair<int, int> shift(int x, int y, ActionId dir) const noexcept {
        int nx = x;
        int ny = y;
        switch (dir) {
            case Up: ny += 1; break;
            case Down: ny -= 1; break;
            case Left: nx -= 1; break;
            default: nx += 1; break;
        }
        if (nx < 0 || nx >= grid_ || ny < 0 || ny >= grid_) {
            return {x, y};
        }
        return {nx, ny};
    }

    [[nodiscard]] Step transition(StateId s, ActionId a, int x, int y) const {
        const Decoded d = decode(s);
        bool flag = d.flag;
        double reward = 0.0;
        if (d.t == 1) {
            if (completes_opening(s, a)) {
                flag = true;
                reward = cfg_.penalty;
            } else {
                reward = cfg_.distraction;
            }
        }
        const bool done = d.t + 1 == length();
        if (done && flag) {
            reward += cfg_.delayed;
        }
        return {encode(d.t + 1, flag, x, y), reward, done};
    }

    TraceBackConfig cfg_;
    int grid_ = 0;
    int start_ = 0;
};

}  // namespace rudder::envs
