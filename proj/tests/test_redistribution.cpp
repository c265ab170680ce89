#include "rudder/envs.hpp"
#include "rudder/redistribution.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace rudder;
using namespace rudder::envs;

namespace {

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(Contributions, DifferencesAndCumulativeAreInverse) {
    const std::vector<double> g{0.5, 1.5, 1.0, 4.0};
    const auto h = contributions_prediction_diff(g);
    EXPECT_EQ(h, (std::vector<double>{0.5, 1.0, -0.5, 3.0}));
    EXPECT_EQ(cumulative(h), g);
}

TEST(Redistribute, FinalCorrectionKeepsTheReturn) {
    const std::vector<double> c{0.1, 2.0, -0.3};
    const Redistribution r = redistribute(5.0, c, RedistributionMode::FinalCorrection);
    EXPECT_EQ(r.h, c);
    EXPECT_NEAR(r.compensation, 5.0 - 1.8, 1e-15);
    EXPECT_NEAR(r.total(), 5.0, 1e-15);
}

TEST(Redistribute, UniformSpreadsTheResidual) {
    const std::vector<double> c{1.0, 1.0, 1.0, 1.0};
    const Redistribution r = redistribute(8.0, c, RedistributionMode::Uniform);
    EXPECT_EQ(r.compensation, 0.0);
    for (double x : r.h) EXPECT_DOUBLE_EQ(x, 2.0);
    EXPECT_THROW(redistribute(1.0, std::vector<double>{}, RedistributionMode::Uniform), ConfigError);
}

TEST(Redistribute, TotalsAreExactOnRandomInputs) {
    Rng rng(1);
    std::normal_distribution<double> n(0.0, 100.0);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> c(1 + i % 40);
        for (double& x : c) x = n(rng);
        const double ret = n(rng);
        for (auto mode : {RedistributionMode::FinalCorrection, RedistributionMode::Uniform})
            EXPECT_LT(std::abs(redistribute(ret, c, mode).total() - ret), 1e-10);
    }
}

TEST(IntegratedGradients, CompletenessGapShrinksWithMorePoints) {
    Rng rng(2);
    LstmConfig cfg;
    cfg.cells = 4;
    cfg.init_scale = 0.5;
    cfg.zero_head = false;
    const LstmParams p = LstmParams::init(3, cfg, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> x(6 * 3);
    for (double& v : x) v = n(rng);
    const IgResult coarse = integrated_gradients(p, x, {}, 4);
    const IgResult fine = integrated_gradients(p, x, {}, 400);
    EXPECT_LT(fine.completeness_gap, coarse.completeness_gap);
    EXPECT_LT(fine.completeness_gap, 1e-2 * std::max(1.0, std::abs(fine.output - fine.baseline_output)));
    EXPECT_NEAR(sum(fine.per_step), sum(fine.per_input), 1e-12);
    EXPECT_NEAR(fine.output, lstm_predict(p, x).back(), 1e-15);
    EXPECT_THROW(integrated_gradients(p, x, {}, 0), ConfigError);
}

TEST(IntegratedGradients, InputAtTheBaselineGetsNoCredit) {
    Rng rng(3);
    LstmConfig cfg;
    cfg.zero_head = false;
    const LstmParams p = LstmParams::init(2, cfg, rng);
    std::vector<double> x{1.0, -1.0, 0.0, 0.0, 2.0, 0.5};
    const IgResult r = integrated_gradients(p, x, {}, 50);
    EXPECT_DOUBLE_EQ(r.per_step[1], 0.0);
}

TEST(OracleContributions, TelescopeToTheLastQ) {
    Choice env;
    const ExactQ q = backward_induction(env, uniform_policy_fn(2));
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const EpisodeTrace tr = sample_episode(env, [](StateId, Rng& r) { return ActionId(r() % 2); }, rng);
        const auto h = contributions_oracle(q, tr);
        EXPECT_NEAR(sum(h), q.at(tr.states.back(), tr.actions.back()), 1e-12);
        // the final step of this task is deterministic given its state, so q there equals the return
        EXPECT_NEAR(sum(h), episode_return(tr), 1e-12);
    }
}

TEST(OracleContributions, DelayedFormEqualsThePlainOracleOnTheFullyDelayedProcess) {
    ChargeDischargeConfig cfg;
    cfg.horizon = 6;
    const ChargeDischarge inner(cfg);
    const auto partial = charge_discharge(cfg);              // large rewards held back
    const auto full = delay_wrapper(inner, 1.0, 0.0, 60.0);  // everything held back
    const ExactQ qp = backward_induction(partial, uniform_policy_fn(2));
    const ExactQ qf = backward_induction(full, uniform_policy_fn(2));
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng a(seed);
        Rng b(seed);
        auto pick = [](StateId, Rng& r) { return ActionId(r() % 2); };
        const EpisodeTrace tp = sample_episode(partial, pick, a);
        const EpisodeTrace tf = sample_episode(full, pick, b);
        const auto hp = contributions_oracle_delayed(qp, tp);
        const auto hf = contributions_oracle(qf, tf);
        for (std::size_t t = 0; t < hp.size(); ++t) EXPECT_NEAR(hp[t], hf[t], 1e-12);
    }
}

TEST(Kappa, OracleRedistributionHasNoExpectedFutureReward) {
    ChargeDischargeConfig cfg;
    cfg.horizon = 4;
    const auto env = charge_discharge(cfg);
    Rng rng(5);
    const KappaTable k = oracle_kappa(env, 5000, rng);
    EXPECT_EQ(k.cells.size(), 6u);  // L = 4: t = 0..2, m up to L-2-t
    EXPECT_TRUE(k.all_within(3.0));
    EXPECT_EQ(k.at(0, 0).count, 5000u);
}

TEST(Kappa, DelayedRewardHasLargeKappa) {
    // with h equal to the raw delayed rewards, kappa at t = 0 is the whole expected return
    Choice env;
    Rng rng(6);
    const KappaTable k = kappa_empirical(
        env, [](StateId, Rng&) { return ActionId{Choice::Plus}; },
        [](const EpisodeTrace& tr) { return tr.rewards; }, 5000, rng);
    const KappaCell& full = k.at(env.length() - 2, 0);
    EXPECT_NEAR(full.mean, 6.0, 4 * full.se);
    EXPECT_FALSE(full.within(3.0));
}

TEST(KappaTd, LearnsTheExpectedRemainingReward) {
    Rng mdp_rng(7);
    const TableEnv env = random_mdp({2, 2, 3}, mdp_rng);
    const ExactQ q = backward_induction(env, uniform_policy_fn(2));
    KappaTd td(env.state_count(), 2, 0.002, 0.0);
    Rng rng(8);
    for (int ep = 0; ep < 100000; ++ep) {
        const EpisodeTrace tr = sample_episode(env, [](StateId, Rng& r) { return ActionId(r() % 2); }, rng);
        td.learn_episode(tr, tr.rewards);
    }
    for (StateId s = 0; s < 4; ++s) {
        for (ActionId a = 0; a < 2; ++a) {
            double er = 0.0;
            for (const auto& o : env.outcomes(s, a)) er += o.probability * o.reward;
            EXPECT_NEAR(td.value(s, a), q.at(s, a) - er, 0.15) << s << "," << a;
        }
    }
}

TEST(RewardCorrection, KeepsTheEpisodeSum) {
    const std::vector<double> h{1.0, 2.0, 3.0};
    const std::vector<double> k{0.5, -1.0, 9.0};
    const auto c = reward_correction(h, k);
    EXPECT_EQ(c, (std::vector<double>{1.5, 0.5, 4.0}));
    EXPECT_DOUBLE_EQ(sum(c), sum(h));
    EXPECT_THROW(reward_correction(h, std::vector<double>{1.0}), ConfigError);
}

TEST(LambdaReturn, EndpointsAndHandValue) {
    const std::vector<double> r{1.0, 2.0, 4.0};
    EXPECT_EQ(lambda_redistributed_return(r, 1.0), tail_returns(r));
    EXPECT_EQ(lambda_redistributed_return(r, 0.0), r);
    EXPECT_DOUBLE_EQ(lambda_redistributed_return(r, 0.5)[0], 1.0 + 0.5 * (2.0 + 0.5 * 4.0));
    EXPECT_THROW(lambda_redistributed_return(r, -0.1), ConfigError);
}

TEST(OracleContributions, OnTopOfPaidRewardsGivesTheReturnDecomposition) {
    GridWorldConfig cfg;
    cfg.delay = 3;
    const GridWorld env(cfg);
    const ExactQ q = backward_induction(env);
    Rng rng(9);
    for (int i = 0; i < 40; ++i) {
        const EpisodeTrace tr = sample_episode(env, [](StateId, Rng& r) { return ActionId(r() % 4); }, rng);
        const auto h = contributions_oracle_on_top(q, tr);
        // g_t: rewards paid before t plus q(s_t, a_t)
        double paid = 0.0;
        double prev = 0.0;
        for (std::size_t t = 0; t < tr.size(); ++t) {
            const double g = paid + q.at(tr.states[t], tr.actions[t]);
            EXPECT_NEAR(tr.rewards[t] + h[t], g - prev, 1e-9);
            prev = g;
            paid += tr.rewards[t];
        }
    }
}
