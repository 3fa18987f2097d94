#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace safeopl;
using namespace safeopl::testing;

namespace {

TrainConfig no_rescale() {
    TrainConfig cfg;
    cfg.rescale_gradient = false;
    return cfg;
}

TrainConfig small_train(int steps) {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.hidden = 8;
    cfg.batch_contexts = 128;
    return cfg;
}

struct Folds {
    BanditDataset s1, s2;
};

Folds split_folds(const BanditDataset& d, RngStream& rng) {
    const auto s = split_dataset(d, 0.5, rng);
    return {s.fold(Fold::S1), s.fold(Fold::S2)};
}

}  // namespace

TEST(ValueGradient, ConstantRewardGivesZero) {
    RngStream rng(1, 0);
    const auto p = random_policy(4, 8, 6, rng);
    const Matrix x = random_normal(20, 4, rng);
    const auto g = value_gradient(p, x, Matrix::Constant(20, 6, 0.37), no_rescale());
    EXPECT_LT(g.values.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(ValueGradient, MatchesFiniteDifferences) {
    RngStream rng(2, 0);
    for (int rep = 0; rep < 20; ++rep) {
        auto p = random_policy(4, 8, 6, rng);
        const Matrix x = random_normal(10, 4, rng);
        const Matrix q = random_normal(10, 6, rng).cwiseAbs();
        const Vector analytic = value_gradient(p, x, q, no_rescale()).values;
        const Vector numeric =
            finite_difference(p.params(), [&] { return p.probabilities(x).cwiseProduct(q).sum() / 10.0; });
        EXPECT_LE(relative_error(analytic, numeric), 1e-4);
    }
}

TEST(ValueGradient, RescaleDividesByMaxProbability) {
    RngStream rng(3, 0);
    const auto p = random_policy(4, 8, 6, rng);
    const Matrix x = random_normal(10, 4, rng);
    const Matrix q = random_normal(10, 6, rng).cwiseAbs();
    const Vector raw = value_gradient(p, x, q, no_rescale()).values;
    const Vector scaled = value_gradient(p, x, q, TrainConfig{}).values;
    EXPECT_LT((scaled - raw / p.probabilities(x).maxCoeff()).norm(), 1e-12 * raw.norm());
}

TEST(ValueGradient, OneHotRewardAscentRaisesThatAction) {
    RngStream rng(4, 0);
    auto p = random_policy(4, 8, 6, rng, 0.5);
    const Matrix x = random_normal(16, 4, rng);
    Matrix q = Matrix::Zero(16, 6);
    q.col(3).setOnes();
    const Vector before = p.probabilities(x).col(3);
    p.ascend(value_gradient(p, x, q, TrainConfig{}), 0.01);
    const Vector after = p.probabilities(x).col(3);
    for (Eigen::Index i = 0; i < x.rows(); ++i) EXPECT_GT(after[i], before[i]) << "context " << i;
}

TEST(ValueGradient, EmptyBatchThrows) {
    const SoftmaxPolicy p(4, 8, 6);
    EXPECT_THROW(value_gradient(p, Matrix(0, 4), Matrix(0, 6), TrainConfig{}), std::invalid_argument);
}

TEST(EntropyGradient, UniformPolicyIsStationary) {
    RngStream rng(5, 0);
    const auto p = SoftmaxPolicy::initialized(4, 8, 6, rng);
    EXPECT_LT(entropy_gradient(p, random_normal(10, 4, rng)).values.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(EntropyGradient, MatchesFiniteDifferences) {
    RngStream rng(6, 0);
    for (int rep = 0; rep < 20; ++rep) {
        auto p = random_policy(4, 8, 6, rng);
        const Matrix x = random_normal(10, 4, rng);
        const Vector analytic = entropy_gradient(p, x).values;
        const Vector numeric = finite_difference(p.params(), [&] { return policy_entropy(p, x); });
        EXPECT_LE(relative_error(analytic, numeric), 1e-4);
    }
}

TEST(EntropyGradient, AscentRaisesEntropyOfNearDeterministicPolicy) {
    SoftmaxPolicy p(4, 8, 6);
    RngStream rng(7, 0);
    p.network().init_glorot_uniform(rng);
    p.network().bias(1) << 8.0, 0.0, 0.0, 0.0, 0.0, 0.0;
    const Matrix x = random_normal(10, 4, rng);
    const double before = policy_entropy(p, x);
    p.ascend(entropy_gradient(p, x), 0.1);
    EXPECT_GT(policy_entropy(p, x), before);
}

TEST(Regularizer, ZeroRewardsGiveZero) {
    const Environment env(small_env_config());
    RngStream rng(8, 0);
    const auto logged = generate_logged_data(env, {0.0}, 50, rng);
    const BanditDataset d(logged.contexts(), logged.actions(), Vector::Zero(50), logged.propensities(), "pi0");
    const auto [r, g] = regularizer_value_and_gradient(random_policy(4, 8, 6, rng), d);
    EXPECT_EQ(r, 0.0);
    EXPECT_EQ(g.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Regularizer, SingleSampleHandCase) {
    SoftmaxPolicy p(1, 1, 2);
    BanditDataset d(1, "pi0");
    d.push_back({Vector::Zero(1), 1, 1.0, 0.5});
    EXPECT_NEAR(regularizer_value_and_gradient(p, d).first, std::log(0.5), 1e-15);
    EXPECT_NEAR(regularizer_value_and_gradient(p, d).first, -0.6931, 5e-5);
}

TEST(Regularizer, MatchesFiniteDifferences) {
    const Environment env(small_env_config());
    RngStream rng(9, 0);
    const auto d = generate_logged_data(env, {8.0}, 30, rng);
    for (int rep = 0; rep < 10; ++rep) {
        auto p = random_policy(4, 8, 6, rng);
        const Vector analytic = regularizer_value_and_gradient(p, d).second.values;
        const Vector numeric = finite_difference(p.params(), [&] { return regularizer_value_and_gradient(p, d).first; });
        EXPECT_LE(relative_error(analytic, numeric), 1e-4);
    }
}

TEST(ObjectiveStep, CombinesTheThreeTerms) {
    const Environment env(small_env_config());
    RngStream rng(10, 0);
    const auto d = generate_logged_data(env, {8.0}, 25, rng);
    auto p = random_policy(4, 8, 6, rng);
    const Matrix q = env.reward_matrix(d.contexts());
    const double alpha = 0.1, lambda = 0.7;
    const auto objective = [&] {
        return (1.0 - alpha) * p.probabilities(d.contexts()).cwiseProduct(q).sum() / 25.0 +
               alpha * policy_entropy(p, d.contexts()) + lambda * regularizer_value_and_gradient(p, d).first;
    };
    const auto st = objective_step(p, d.contexts(), q, d.actions(), d.rewards(), alpha, lambda, false);
    EXPECT_NEAR(st.objective, objective(), 1e-12);
    EXPECT_LE(relative_error(st.gradient.values, finite_difference(p.params(), objective)), 1e-4);
}

TEST(LambdaUpdate, HandCase) {
    EXPECT_NEAR(lambda_update(0.5, 0.01, 0.1, 0.3), 0.502, 1e-15);
    EXPECT_EQ(lambda_update(0.001, 0.01, 1.0, 0.0), 0.0);
}

TEST(TrainOpg, OneHotRewardDominates) {
    const Environment env(small_env_config());
    RngStream rng(11, 0);
    const auto d = generate_logged_data(env, {0.0}, 1000, rng);
    auto cfg = small_train(500);
    cfg.entropy_alpha = 0.0;
    const auto res = train_opg(d, ActionTableModel{one_hot(6, 4)}, env.action_features(), cfg, rng);
    auto probe_rng = rng.derive("probe");
    const Matrix x = env.sample_contexts(200, probe_rng);
    EXPECT_GE(res.policy.probabilities(x).col(4).minCoeff(), 0.9);
}

TEST(TrainOpg, HeavyEntropyKeepsPolicySpread) {
    const Environment env(small_env_config());
    RngStream rng(12, 0);
    const auto d = generate_logged_data(env, {0.0}, 1000, rng);
    auto cfg = small_train(500);
    cfg.entropy_alpha = 0.99;
    const auto res = train_opg(d, ActionTableModel{one_hot(6, 4)}, env.action_features(), cfg, rng);
    auto probe_rng = rng.derive("probe");
    EXPECT_GE(policy_entropy(res.policy, env.sample_contexts(200, probe_rng)), 0.95 * std::log(6.0));
}

TEST(TrainOpg, ZeroStepsReturnsUniformPolicy) {
    const Environment env(small_env_config());
    RngStream rng(13, 0);
    const auto d = generate_logged_data(env, {0.0}, 100, rng);
    const auto res = train_opg(d, ConstantModel{0.5}, env.action_features(), small_train(0), rng);
    EXPECT_TRUE(res.state.trace.empty());
    const Matrix probs = res.policy.probabilities(d.contexts());
    EXPECT_LT((probs.array() - 1.0 / 6.0).abs().maxCoeff(), 1e-15);
}

TEST(TrainOpg, FullBatchValueIsNondecreasing) {
    const Environment env(small_env_config());
    RngStream rng(14, 0);
    const auto d = generate_logged_data(env, {8.0}, 200, rng);
    auto cfg = small_train(100);
    cfg.entropy_alpha = 0.0;
    cfg.eta_psi = 1e-3;
    cfg.batch_contexts = 200;
    const auto res = train_opg(d, OracleModel{&env}, env.action_features(), cfg, rng);
    ASSERT_EQ(res.state.trace.size(), 100u);
    for (std::size_t s = 1; s < res.state.trace.size(); ++s) {
        EXPECT_GE(res.state.trace[s].batch_objective, res.state.trace[s - 1].batch_objective) << "step " << s;
    }
    EXPECT_GE(ope_dm(res.policy, d, OracleModel{&env}, env.action_features()), res.state.trace.back().batch_objective);
}

TEST(TrainSafeOpg, UnattainableThresholdOnlyRaisesLambda) {
    const Environment env(small_env_config());
    RngStream rng(15, 0);
    const auto d = generate_logged_data(env, {8.0}, 1000, rng);
    const auto f = split_folds(d, rng);
    const HcopeConfig hc;
    const double C = hc.tau_grid.back() * hc.reward_max + 1.0;
    const auto res = train_safe_opg(f.s1, f.s2, {C, 0.05}, hc, OracleModel{&env}, env.action_features(),
                                    small_train(200), rng);
    for (std::size_t s = 1; s < res.state.trace.size(); ++s) {
        EXPECT_GE(res.state.trace[s].lambda, res.state.trace[s - 1].lambda);
    }
    EXPECT_GT(res.state.lambda, 0.0);
}

TEST(TrainSafeOpg, SlackThresholdKeepsLambdaAtZero) {
    const Environment env(small_env_config());
    RngStream rng(16, 0);
    const auto d = generate_logged_data(env, {8.0}, 1000, rng);
    const auto f = split_folds(d, rng);
    const auto res = train_safe_opg(f.s1, f.s2, {-1.0, 0.05}, HcopeConfig{}, OracleModel{&env},
                                    env.action_features(), small_train(200), rng);
    for (const auto& row : res.state.trace) EXPECT_EQ(row.lambda, 0.0);
}

TEST(TrainSafeOpg, LambdaStaysNonnegative) {
    const Environment env(small_env_config());
    RngStream rng(17, 0);
    const auto d = generate_logged_data(env, {8.0}, 1000, rng);
    const auto f = split_folds(d, rng);
    auto cfg = small_train(300);
    cfg.eta_lambda = 0.5;
    const double C = 0.95 * on_policy_value(d);
    const auto res =
        train_safe_opg(f.s1, f.s2, {C, 0.05}, HcopeConfig{}, OracleModel{&env}, env.action_features(), cfg, rng);
    for (const auto& row : res.state.trace) {
        EXPECT_GE(row.lambda, 0.0);
        EXPECT_TRUE(std::isfinite(row.lower_bound));
    }
}

TEST(TrainSafeOpg, OverlappingFoldsAreRejected) {
    const Environment env(small_env_config());
    RngStream rng(18, 0);
    const auto d = generate_logged_data(env, {8.0}, 200, rng);
    try {
        train_safe_opg(d, d.select(std::vector<std::size_t>{0, 1, 2}), {0.1, 0.05}, HcopeConfig{}, ConstantModel{},
                       env.action_features(), small_train(1), rng);
        FAIL() << "expected fold leakage";
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "fold leakage");
    }
}

TEST(TrainSafeOpg, SecondFoldIsReadOnlyThroughTheLowerBound) {
    const Environment env(small_env_config());
    RngStream rng(19, 0);
    const auto d = generate_logged_data(env, {8.0}, 1000, rng);
    auto f = split_folds(d, rng);

    auto reference = f.s2;
    auto ref_probe = std::make_shared<AccessProbe>();
    reference.attach_probe(ref_probe);
    (void)hcope_lower_bound(SoftmaxPolicy(4, 8, 6), reference, HcopeConfig{}, RngStream(1, 1));
    const long per_call = ref_probe->reads.load();
    ASSERT_GT(per_call, 0);

    auto probe = std::make_shared<AccessProbe>();
    f.s2.attach_probe(probe);
    auto cfg = small_train(60);
    cfg.lambda_update_interval = 4;
    (void)train_safe_opg(f.s1, f.s2, {0.2, 0.05}, HcopeConfig{}, OracleModel{&env}, env.action_features(), cfg, rng);
    EXPECT_EQ(probe->reads.load(), per_call * (60 / 4));
}

TEST(TrainSafeOpg, FrozenLambdaMatchesPlainOpgOnFirstFold) {
    const Environment env(small_env_config());
    RngStream rng(20, 0);
    const auto d = generate_logged_data(env, {8.0}, 1000, rng);
    const auto f = split_folds(d, rng);
    auto cfg = small_train(100);
    cfg.freeze_lambda = true;
    RngStream a(200, 0), b(200, 0);
    const auto safe = train_safe_opg(f.s1, f.s2, {10.0, 0.05}, HcopeConfig{}, OracleModel{&env},
                                     env.action_features(), cfg, a);
    const auto plain = train_opg(f.s1, OracleModel{&env}, env.action_features(), cfg, b);
    EXPECT_EQ(safe.policy.params(), plain.policy.params());
    for (const auto& row : safe.state.trace) EXPECT_EQ(row.lambda, 0.0);
}

TEST(TrainSafeOpg, DeterministicUnderFixedRng) {
    const Environment env(small_env_config());
    RngStream rng(21, 0);
    const auto d = generate_logged_data(env, {8.0}, 600, rng);
    const auto f = split_folds(d, rng);
    RngStream a(7, 7), b(7, 7);
    const auto r1 = train_safe_opg(f.s1, f.s2, {0.2, 0.05}, HcopeConfig{}, OracleModel{&env}, env.action_features(),
                                   small_train(50), a);
    const auto r2 = train_safe_opg(f.s1, f.s2, {0.2, 0.05}, HcopeConfig{}, OracleModel{&env}, env.action_features(),
                                   small_train(50), b);
    EXPECT_EQ(r1.policy.params(), r2.policy.params());
    EXPECT_EQ(r1.state.lambda, r2.state.lambda);
}

TEST(NaiveSafeExploration, NoveltyEqualsMix) {
    const Environment env(small_env_config());
    const auto p = naive_safe_exploration({8.0}, env, 0.05);
    RngStream rng(22, 0);
    const Matrix probs = p.probabilities(env.sample_contexts(100, rng));
    EXPECT_LT((probs.rightCols(env.n_novel()).rowwise().sum().array() - 0.05).abs().maxCoeff(), 1e-15);
}

TEST(NaiveSafeExploration, ZeroMixIsLoggingPolicy) {
    const Environment env(small_env_config());
    RngStream rng(23, 0);
    const Matrix x = env.sample_contexts(50, rng);
    EXPECT_EQ(naive_safe_exploration({8.0}, env, 0.0).probabilities(x), env.logging_probs({8.0}, x));
}

TEST(NaiveSafeExploration, TenNovelActionsShareTheMix) {
    EnvironmentConfig c = small_env_config();
    c.n_actions = 50;
    c.n_supported = 40;
    const Environment env(c);
    RngStream rng(24, 0);
    const Matrix probs = naive_safe_exploration({8.0}, env, 0.05).probabilities(env.sample_contexts(30, rng));
    EXPECT_LT((probs.rightCols(10).array() - 0.005).abs().maxCoeff(), 1e-15);
}

TEST(NaiveSafeExploration, MixOutsideRangeThrows) {
    const Environment env(small_env_config());
    EXPECT_THROW(naive_safe_exploration({8.0}, env, 1.0), std::invalid_argument);
    EXPECT_THROW(naive_safe_exploration({8.0}, env, -0.1), std::invalid_argument);
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.entropy_alpha = 1.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.eta_lambda = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    EXPECT_EQ(TrainConfig::safe_defaults().eta_psi, 0.001);
    EXPECT_EQ(TrainConfig{}.eta_psi, 0.1);
}
