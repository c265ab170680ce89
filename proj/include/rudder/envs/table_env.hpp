#pragma once

// Explicit-table environments: the model is a list of outcomes per (s, a).
// Used for toy processes in tests and for seeded random layered MDPs.

#include "rudder/core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace rudder::envs {

class TableEnv {
public:
    /// `model[s * actions + a]` lists the outcomes of (s, a). States without a
    /// meaningful model (terminal layer) may have empty lists.
    TableEnv(std::size_t length, std::size_t states, std::size_t actions,
             std::vector<std::pair<StateId, double>> initial, std::vector<std::vector<Outcome>> model)
        : length_(length), states_(states), actions_(actions), initial_(std::move(initial)), model_(std::move(model)) {
        if (model_.size() != states_ * actions_) {
            throw ConfigError("table model has wrong size");
        }
        check_distribution(initial_);
        for (const auto& row : model_) {
            if (row.empty()) {
                continue;
            }
            double sum = 0.0;
            for (const auto& o : row) {
                if (o.next >= states_ || !(o.probability >= 0.0)) {
                    throw ConfigError("table model outcome is invalid");
                }
                sum += o.probability;
            }
            if (std::abs(sum - 1.0) > 1e-12) {
                throw ConfigError("table model outcome probabilities do not sum to 1");
            }
        }
    }

    [[nodiscard]] std::size_t length() const noexcept { return length_; }
    [[nodiscard]] std::size_t state_count() const noexcept { return states_; }
    [[nodiscard]] std::size_t action_count() const noexcept { return actions_; }

    StateId reset(Rng& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double x = u(rng);
        for (const auto& [s, p] : initial_) {
            if (x < p) {
                return s;
            }
            x -= p;
        }
        return initial_.back().first;
    }

    std::vector<std::pair<StateId, double>> initial_distribution() const { return initial_; }

    std::vector<Outcome> outcomes(StateId s, ActionId a) const {
        if (s >= states_ || a >= actions_) {
            throw ConfigError("table env index out of range");
        }
        const auto& row = model_[s * actions_ + a];
        if (row.empty()) {
            throw std::logic_error("no model for state " + std::to_string(s));
        }
        return row;
    }

    Step step(StateId s, ActionId a, Rng& rng) const {
        const auto& row = model_.at(s * actions_ + a);
        if (row.empty()) {
            throw std::logic_error("no model for state " + std::to_string(s));
        }
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double x = u(rng);
        for (const auto& o : row) {
            if (x < o.probability) {
                return {o.next, o.reward, o.done};
            }
            x -= o.probability;
        }
        const auto& o = row.back();
        return {o.next, o.reward, o.done};
    }

private:
    static void check_distribution(const std::vector<std::pair<StateId, double>>& d) {
        double sum = 0.0;
        for (const auto& e : d) {
            sum += e.second;
        }
        if (d.empty() || std::abs(sum - 1.0) > 1e-12) {
            throw ConfigError("initial distribution does not sum to 1");
        }
    }

    std::size_t length_;
    std::size_t states_;
    std::size_t actions_;
    std::vector<std::pair<StateId, double>> initial_;
    std::vector<std::vector<Outcome>> model_;
};

struct RandomMdpConfig {
    std::size_t states_per_layer = 3;
    std::size_t actions = 2;
    std::size_t horizon = 3;  ///< decisions per episode
};

/// Layered random MDP: state id = t * K + k, a final empty layer at t = L.
/// Transitions are Dirichlet(1,...,1) over the next layer; the mean reward of
/// (s, a) is uniform on [-1, 1] with symmetric two-point noise that does not
/// depend on the successor.
inline TableEnv random_mdp(const RandomMdpConfig& cfg, Rng& rng) {
    const std::size_t K = cfg.states_per_layer;
    const std::size_t A = cfg.actions;
    const std::size_t L = cfg.horizon;
    if (K == 0 || A == 0 || L == 0) {
        throw ConfigError("random MDP needs states, actions and a horizon");
    }
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::exponential_distribution<double> gamma1(1.0);
    auto dirichlet = [&](std::size_t n) {
        std::vector<double> w(n);
        double sum = 0.0;
        for (auto& x : w) {
            x = gamma1(rng) + 1e-12;
            sum += x;
        }
        for (auto& x : w) {
            x /= sum;
        }
        return w;
    };

    const std::size_t states = (L + 1) * K;
    std::vector<std::vector<Outcome>> model(states * A);
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t k = 0; k < K; ++k) {
            const StateId s = t * K + k;
            for (ActionId a = 0; a < A; ++a) {
                const double mean = unit(rng);
                const double spread = (1.0 - std::abs(mean)) * std::abs(unit(rng));
                const auto w = dirichlet(K);
                auto& row = model[s * A + a];
                for (std::size_t k2 = 0; k2 < K; ++k2) {
                    const StateId next = (t + 1) * K + k2;
                    const bool done = t + 1 == L;
                    row.push_back({next, mean + spread, 0.5 * w[k2], done});
                    row.push_back({next, mean - spread, 0.5 * w[k2], done});
                }
                // Renormalise against rounding so rows sum to 1 within 1e-12.
                double sum = 0.0;
                for (const auto& o : row) {
                    sum += o.probability;
                }
                for (auto& o : row) {
                    o.probability /= sum;
                }
            }
        }
    }
    std::vector<std::pair<StateId, double>> init;
    const auto w0 = dirichlet(K);
    for (std::size_t k = 0; k < K; ++k) {
        init.emplace_back(k, w0[k]);
    }
    return TableEnv(L, states, A, std::move(init), std::move(model));
}

}  // namespace rudder::envs
