#include "rudder/envs.hpp"
#include "rudder/exact.hpp"
#include "rudder/tabular.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace rudder;
using namespace rudder::envs;

namespace {

// Dense reference for SARSA(lambda) and Watkins Q(lambda) with accumulating traces.
struct DenseLambda {
    std::size_t A;
    double alpha;
    double lambda;
    std::vector<double> q;
    std::vector<double> e;

    double max_row(StateId s) const {
        double m = q[s * A];
        for (std::size_t b = 1; b < A; ++b) m = std::max(m, q[s * A + b]);
        return m;
    }
    void step(StateId s, ActionId a, double r, StateId n, ActionId na, bool term, bool watkins) {
        const double boot = term ? 0.0 : (watkins ? max_row(n) : q[n * A + na]);
        const double delta = r + boot - q[s * A + a];
        e[s * A + a] += 1.0;
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += alpha * delta * e[i];
        const bool cut = term || (watkins && q[n * A + na] != max_row(n));
        for (double& x : e) x = cut ? 0.0 : x * lambda;
    }
};

EpisodeTrace random_walk(const TableEnv& env, Rng& rng) {
    return sample_episode(env, [&](StateId, Rng& r) { return static_cast<ActionId>(r() % env.action_count()); }, rng);
}

}  // namespace

TEST(Greedy, TieBreakIsUniform) {
    Rng rng(1);
    const std::vector<double> row{1.0, 3.0, 3.0, 0.0};
    int hits[4] = {0, 0, 0, 0};
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++hits[greedy_action(row, rng)];
    EXPECT_EQ(hits[0] + hits[3], 0);
    const double se = std::sqrt(0.25 / n) * n;
    EXPECT_NEAR(hits[1], n / 2.0, 4 * se);
}

TEST(EpsilonGreedy, ProbabilitiesAreNormalisedAndMatchSampling) {
    const std::vector<double> row{0.5, 2.0, -1.0};
    const double eps = 0.3;
    double total = 0.0;
    for (ActionId a = 0; a < 3; ++a) total += epsilon_greedy_prob(row, eps, a);
    EXPECT_NEAR(total, 1.0, 1e-15);
    EXPECT_NEAR(epsilon_greedy_prob(row, eps, 1), 0.7 + 0.1, 1e-15);

    Rng rng(2);
    const int n = 100000;
    int hits[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) ++hits[epsilon_greedy(row, eps, rng)];
    for (ActionId a = 0; a < 3; ++a) {
        const double p = epsilon_greedy_prob(row, eps, a);
        EXPECT_NEAR(hits[a] / double(n), p, 4 * std::sqrt(p * (1 - p) / n));
    }
    EXPECT_THROW(epsilon_greedy(row, 1.5, rng), ConfigError);
}

TEST(QLearning, OneStepByHand) {
    TabularQ q(2, 2, 0.5);
    q.q(1, 0) = 2.0;
    q.q(1, 1) = -3.0;
    q_learning_update(q, 0, 1, 1.0, 1, false);
    EXPECT_DOUBLE_EQ(q.q(0, 1), 1.5);
    q_learning_update(q, 0, 1, 1.0, 1, true);
    EXPECT_DOUBLE_EQ(q.q(0, 1), 1.25);
    EXPECT_EQ(q.n(0, 1), 2u);
}

TEST(QLearning, ConvergesToTheOptimumWithHarmonicSteps) {
    Rng mdp_rng(3);
    const TableEnv env = random_mdp({2, 2, 2}, mdp_rng);
    const ExactQ opt = backward_induction(env);
    TabularQ q(env.state_count(), 2);
    Rng rng(4);
    for (int ep = 0; ep < 200000; ++ep) {
        const EpisodeTrace tr = random_walk(env, rng);
        for (std::size_t t = 0; t < tr.size(); ++t) {
            q.set_alpha(1.0 / static_cast<double>(q.n(tr.states[t], tr.actions[t]) + 1));
            const bool last = t + 1 == tr.size();
            q_learning_update(q, tr.states[t], tr.actions[t], tr.rewards[t], last ? 0 : tr.states[t + 1], last);
        }
    }
    for (StateId s = 0; s < 4; ++s)
        for (ActionId a = 0; a < 2; ++a) EXPECT_NEAR(q.q(s, a), opt.at(s, a), 0.05) << s << "," << a;
}

TEST(Sarsa, OneStepByHand) {
    TabularQ q(2, 2, 0.1);
    q.q(1, 1) = 10.0;
    sarsa_update(q, 0, 0, 0.0, 1, 1, false);
    EXPECT_DOUBLE_EQ(q.q(0, 0), 1.0);
}

TEST(ExpectedSarsa, UsesThePolicyAverage) {
    TabularQ q(2, 2, 1.0);
    q.q(1, 0) = 4.0;
    q.q(1, 1) = 8.0;
    const std::vector<double> pi{0.75, 0.25};
    expected_sarsa_update(q, 0, 0, 1.0, 1, pi, false);
    EXPECT_DOUBLE_EQ(q.q(0, 0), 1.0 + 5.0);
}

TEST(MonteCarlo, MeanUpdateIsTheSampleMean) {
    TabularQ q(1, 1);
    double sum = 0.0;
    for (int i = 1; i <= 25; ++i) {
        EpisodeTrace tr;
        tr.push(0, 0, i * 0.5, true);
        mc_update_mean(q, tr);
        sum += i * 0.5;
    }
    EXPECT_NEAR(q.q(0, 0), sum / 25.0, 1e-12);
}

TEST(MonteCarlo, ConstantAlphaIsAnExponentialAverageOfTailReturns) {
    TabularQ q(3, 1, 0.25);
    EpisodeTrace tr;
    tr.push(0, 0, 1.0, false);
    tr.push(1, 0, 2.0, false);
    tr.push(2, 0, 4.0, true);
    mc_update_constant_alpha(q, tr);
    EXPECT_DOUBLE_EQ(q.q(0, 0), 0.25 * 7.0);
    EXPECT_DOUBLE_EQ(q.q(1, 0), 0.25 * 6.0);
    mc_update_constant_alpha(q, tr);
    EXPECT_DOUBLE_EQ(q.q(2, 0), 0.25 * 4 + 0.75 * 0.25 * 4);
}

TEST(SarsaLambda, MatchesDenseReference) {
    Rng mdp_rng(5);
    const TableEnv env = random_mdp({3, 2, 5}, mdp_rng);
    TabularQ q(env.state_count(), 2, 0.2, 0.8);
    DenseLambda ref{2, 0.2, 0.8, std::vector<double>(env.state_count() * 2, 0.0),
                    std::vector<double>(env.state_count() * 2, 0.0)};
    Rng rng(6);
    for (int ep = 0; ep < 200; ++ep) {
        const EpisodeTrace tr = random_walk(env, rng);
        for (std::size_t t = 0; t < tr.size(); ++t) {
            const bool last = t + 1 == tr.size();
            const StateId n = last ? 0 : tr.states[t + 1];
            const ActionId na = last ? 0 : tr.actions[t + 1];
            sarsa_lambda_update(q, tr.states[t], tr.actions[t], tr.rewards[t], n, na, last);
            ref.step(tr.states[t], tr.actions[t], tr.rewards[t], n, na, last, false);
        }
    }
    for (std::size_t i = 0; i < ref.q.size(); ++i) EXPECT_NEAR(q.values()[i], ref.q[i], 1e-12);
}

TEST(SarsaLambda, ZeroLambdaIsOneStepSarsa) {
    Rng mdp_rng(7);
    const TableEnv env = random_mdp({3, 2, 4}, mdp_rng);
    TabularQ a(env.state_count(), 2, 0.3, 0.0);
    TabularQ b(env.state_count(), 2, 0.3, 0.0);
    Rng rng(8);
    for (int ep = 0; ep < 100; ++ep) {
        const EpisodeTrace tr = random_walk(env, rng);
        for (std::size_t t = 0; t < tr.size(); ++t) {
            const bool last = t + 1 == tr.size();
            const StateId n = last ? 0 : tr.states[t + 1];
            const ActionId na = last ? 0 : tr.actions[t + 1];
            sarsa_lambda_update(a, tr.states[t], tr.actions[t], tr.rewards[t], n, na, last);
            sarsa_update(b, tr.states[t], tr.actions[t], tr.rewards[t], n, na, last);
        }
    }
    for (std::size_t i = 0; i < a.values().size(); ++i) EXPECT_NEAR(a.values()[i], b.values()[i], 1e-14);
}

TEST(WatkinsQLambda, MatchesDenseReferenceIncludingCuts) {
    Rng mdp_rng(9);
    const TableEnv env = random_mdp({3, 3, 5}, mdp_rng);
    TabularQ q(env.state_count(), 3, 0.15, 0.9);
    DenseLambda ref{3, 0.15, 0.9, std::vector<double>(env.state_count() * 3, 0.0),
                    std::vector<double>(env.state_count() * 3, 0.0)};
    Rng rng(10);
    for (int ep = 0; ep < 300; ++ep) {
        const EpisodeTrace tr = random_walk(env, rng);
        for (std::size_t t = 0; t < tr.size(); ++t) {
            const bool last = t + 1 == tr.size();
            const StateId n = last ? 0 : tr.states[t + 1];
            const ActionId na = last ? 0 : tr.actions[t + 1];
            watkins_q_lambda_update(q, tr.states[t], tr.actions[t], tr.rewards[t], n, na, last);
            ref.step(tr.states[t], tr.actions[t], tr.rewards[t], n, na, last, true);
        }
    }
    for (std::size_t i = 0; i < ref.q.size(); ++i) EXPECT_NEAR(q.values()[i], ref.q[i], 1e-12);
}

TEST(Traces, ReplacingCapsAtOne) {
    TabularQ q(1, 1, 0.1, 0.5, TraceKind::Replacing);
    q.visit(0, 0);
    q.visit(0, 0);
    EXPECT_DOUBLE_EQ(q.e(0, 0), 1.0);
    TabularQ acc(1, 1, 0.1, 0.5);
    acc.visit(0, 0);
    acc.visit(0, 0);
    EXPECT_DOUBLE_EQ(acc.e(0, 0), 2.0);
    acc.decay_traces(0.5);
    EXPECT_DOUBLE_EQ(acc.e(0, 0), 1.0);
}

TEST(TabularQ, RejectsBadLambda) { EXPECT_THROW(TabularQ(2, 2, 0.1, 1.5), ConfigError); }
