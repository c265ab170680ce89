#include "rudder/envs.hpp"
#include "rudder/mcts.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace rudder;
using namespace rudder::envs;

TEST(Ucb1, Formula) {
    EXPECT_NEAR(ucb1(1.0, 4, 16, std::sqrt(2.0)), 1.0 + std::sqrt(2.0 * std::log(16.0) / 4.0), 1e-15);
    EXPECT_EQ(ucb1(-5.0, 0, 10, 1.0), std::numeric_limits<double>::infinity());
}

TEST(Mcts, MaxBackupFindsTheChargeDischargeOptimum) {
    ChargeDischargeConfig cfg;
    cfg.horizon = 6;
    const auto env = charge_discharge(cfg);
    MctsTree<decltype(env)> tree(env, {.expansion_rollouts = 5, .backup = MctsBackup::Max});
    Rng rng(1);
    const StateId root = env.reset(rng);
    for (int i = 0; i < 3000; ++i) tree.simulate(root, 0, rng);
    // follow the greedy path through the tree
    StateId s = root;
    double ret = 0.0;
    for (std::size_t t = 0; t < env.length(); ++t) {
        const Step st = env.step(s, tree.greedy(s, rng), rng);
        ret += st.reward;
        s = st.next;
    }
    EXPECT_DOUBLE_EQ(ret, 30.0);
}

TEST(Mcts, MeanBackupPrefersPlusOnTheChoice) {
    Choice env;
    Rng rng(2);
    int plus = 0;
    for (int k = 0; k < 10; ++k) {
        plus += mcts_search(env, env.root(), 400, rng, {.expansion_rollouts = 1, .backup = MctsBackup::Mean}) ==
                Choice::Plus;
    }
    EXPECT_EQ(plus, 10);
}

TEST(Mcts, RootEdgeValuesAreSampleMeansUnderMeanBackup) {
    // a one-step bandit: each edge value is the mean of its observed rewards
    std::vector<std::vector<Outcome>> m(4);
    m[0] = {{1, 0.0, 0.5, true}, {1, 2.0, 0.5, true}};
    m[1] = {{1, 3.0, 1.0, true}};
    TableEnv env(1, 2, 2, {{0, 1.0}}, m);
    MctsTree<TableEnv> tree(env, {.expansion_rollouts = 0, .backup = MctsBackup::Mean});
    Rng rng(3);
    for (int i = 0; i < 500; ++i) tree.simulate(0, 0, rng);
    const MctsNode* root = tree.find(0);
    ASSERT_NE(root, nullptr);
    EXPECT_DOUBLE_EQ(root->edges[1].value, 3.0);
    EXPECT_EQ(root->visits, 1 + root->edges[0].visits + root->edges[1].visits);
    EXPECT_GT(root->edges[1].visits, root->edges[0].visits);
    EXPECT_EQ(tree.greedy(0, rng), 1u);
}
