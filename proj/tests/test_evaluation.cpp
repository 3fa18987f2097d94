#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace safeopl;
using namespace safeopl::testing;

TEST(ExactPolicyValue, ConstantRewardEnvironment) {
    const auto env = Environment(small_env_config()).with_reward_override([](const Vector&, int) { return 0.3; });
    RngStream rng(1, 0);
    const auto p = random_policy(4, 8, 6, rng);
    EXPECT_NEAR(exact_policy_value(env, p, 200, rng).value, 0.3, 1e-12);
}

TEST(ExactPolicyValue, ArgmaxOnThreeActionEnumeration) {
    auto c = small_env_config();
    c.n_actions = 3;
    c.n_supported = 2;
    const auto env = Environment(c).with_reward_override([](const Vector&, int a) {
        return a == 0 ? 0.2 : (a == 1 ? 0.5 : 0.9);
    });
    RngStream rng(2, 0);
    EXPECT_NEAR(exact_policy_value(env, FixedPolicy{one_hot(3, 2)}, 50, rng).value, 0.9, 1e-15);
}

TEST(ExactPolicyValue, AgreesWithNestedSampling) {
    const Environment env(small_env_config());
    RngStream rng(3, 0);
    const auto p = random_policy(4, 8, 6, rng);
    auto exact_rng = rng.derive("exact");
    const auto exact = exact_policy_value(env, p, 200000, exact_rng);

    const std::size_t n = 1000000;
    auto ctx_rng = rng.derive("contexts");
    auto act_rng = rng.derive("actions");
    auto rew_rng = rng.derive("rewards");
    const Matrix x = env.sample_contexts(n, ctx_rng);
    const Matrix probs = p.probabilities(x);
    const Matrix q = env.reward_matrix(x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const int a = sample_from(probs.row(i).transpose(), act_rng);
        total += rew_rng.uniform() < q(i, a) ? 1.0 : 0.0;
    }
    const double nested = total / static_cast<double>(n);
    const double se = std::sqrt(nested * (1.0 - nested) / static_cast<double>(n) + exact.std_error * exact.std_error);
    EXPECT_NEAR(nested, exact.value, 3.0 * se);
}

TEST(ExactPolicyValue, LoggingPolicyMatchesLoggedMean) {
    const Environment env(small_env_config());
    RngStream rng(4, 0);
    auto eval_rng = rng.derive("eval");
    const auto set = make_evaluation_set(env, 100000, eval_rng);
    const auto v0 = logging_policy_value(env, {8.0}, set);
    EXPECT_NEAR(v0.value, exact_policy_value(LoggingPolicy(env, {8.0}), set).value, 1e-12);
    const auto d = generate_logged_data(env, {8.0}, 50000, rng);
    const double m = on_policy_value(d);
    EXPECT_NEAR(m, v0.value, 3.0 * std::sqrt(m * (1.0 - m) / 50000.0 + v0.std_error * v0.std_error));
}

TEST(Novelty, UniformPolicyOverFiftyActions) {
    EnvironmentConfig c = small_env_config();
    c.n_actions = 50;
    c.n_supported = 40;
    const Environment env(c);
    RngStream rng(5, 0);
    EXPECT_NEAR(novelty(env, FixedPolicy{Vector::Constant(50, 1.0 / 50.0)}, 100, rng).value, 0.2, 1e-12);
}

TEST(Novelty, SupportedOnlyPolicyIsZero) {
    const Environment env(small_env_config());
    RngStream rng(6, 0);
    EXPECT_EQ(novelty(env, LoggingPolicy(env, {8.0}), 100, rng).value, 0.0);
}

TEST(Novelty, DeterministicNovelActionIsOne) {
    const Environment env(small_env_config());
    RngStream rng(7, 0);
    EXPECT_EQ(novelty(env, FixedPolicy{one_hot(6, 5)}, 100, rng).value, 1.0);
}

TEST(Novelty, ComplementsSupportedMass) {
    const Environment env(small_env_config());
    RngStream rng(8, 0);
    const auto p = random_policy(4, 8, 6, rng, 2.0);
    const Matrix x = env.sample_contexts(100, rng);
    const Matrix probs = p.probabilities(x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double nov = novelty(p, Matrix(x.row(i)), env.n_supported()).value;
        EXPECT_NEAR(nov + probs.row(i).head(env.n_supported()).sum(), 1.0, 1e-12);
        EXPECT_GE(nov, 0.0);
        EXPECT_LE(nov, 1.0);
    }
}

TEST(ViolationRate, Examples) {
    EXPECT_EQ(violation_rate({0.3, 0.4}, 0.25), 0.0);
    EXPECT_EQ(violation_rate({0.20, 0.30}, 0.25), 0.5);
    EXPECT_EQ(violation_rate({0.25}, 0.25), 0.0);
    EXPECT_THROW(violation_rate({}, 0.25), std::invalid_argument);
}

TEST(EvaluatePolicy, ReportsRelativeValueAndViolation) {
    const auto env = Environment(small_env_config()).with_reward_override([](const Vector&, int a) {
        return a < 4 ? 0.2 : 0.4;
    });
    RngStream rng(9, 0);
    const auto set = make_evaluation_set(env, 50, rng);
    const auto m = evaluate_policy(FixedPolicy{one_hot(6, 5)}, set, 0.2, 0.19);
    EXPECT_NEAR(m.true_value, 0.4, 1e-15);
    EXPECT_NEAR(m.relative_value, 2.0, 1e-14);
    EXPECT_EQ(m.novelty, 1.0);
    EXPECT_FALSE(m.violated);
    EXPECT_TRUE(evaluate_policy(FixedPolicy{one_hot(6, 0)}, set, 0.2, 0.21).violated);
}

TEST(HypothesisTest, StrictComparison) {
    EXPECT_EQ(validation_hypothesis_test(0.30, 0.25), Decision::Positive);
    EXPECT_EQ(validation_hypothesis_test(0.25, 0.25), Decision::Negative);
    EXPECT_EQ(validation_hypothesis_test(0.20, 0.25), Decision::Negative);
    EXPECT_THROW(validation_hypothesis_test(std::nan(""), 0.25), std::invalid_argument);
}

TEST(HypothesisTest, FourPolicyTally) {
    ConfusionTally t;
    t.add(Decision::Positive, Truth::SafeImproved);
    t.add(Decision::Positive, Truth::SafeImproved);
    t.add(Decision::Negative, Truth::SafeImproved);
    t.add(Decision::Positive, Truth::NotImproved);
    EXPECT_DOUBLE_EQ(t.type1_rate(), 1.0);
    EXPECT_DOUBLE_EQ(t.type2_rate(), 1.0 / 3.0);
}

TEST(HypothesisTest, EmptyPartitionsGiveZeroRates) {
    ConfusionTally t;
    EXPECT_EQ(t.type1_rate(), 0.0);
    EXPECT_EQ(t.type2_rate(), 0.0);
}

TEST(RewardDiagnostics, OracleHasNoGap) {
    const Environment env(small_env_config());
    RngStream rng(10, 0);
    const auto d = reward_model_diagnostics(OracleModel{&env}, env, 200, rng);
    EXPECT_EQ(d.supported.mse, 0.0);
    EXPECT_EQ(d.novel.mse, 0.0);
    EXPECT_EQ(d.supported.signed_gap, 0.0);
    EXPECT_EQ(d.novel.predicted_histogram, d.novel.true_histogram);
}

TEST(RewardDiagnostics, ConstantModelMeans) {
    const Environment env(small_env_config());
    RngStream rng(11, 0);
    const auto d = reward_model_diagnostics(ConstantModel{0.5}, env, 200, rng);
    EXPECT_NEAR(d.supported.mean_predicted, 0.5, 1e-15);
    EXPECT_NEAR(d.novel.mean_predicted, 0.5, 1e-15);
    std::size_t total = 0;
    for (auto c : d.novel.predicted_histogram) total += c;
    EXPECT_EQ(total, 200u * 2u);
}

TEST(RewardDiagnostics, NaiveModelUnderSharpLoggingReportsNovelGap) {
    const Environment env(small_env_config());
    RngStream rng(12, 0);
    const auto data = generate_logged_data(env, {16.0}, 10000, rng);
    RewardModelConfig cfg;
    cfg.n_members = 2;
    auto model_rng = rng.derive("model");
    const auto model = train_reward_model(data, env.action_features(), cfg, RewardModelVariant::NaiveMean, model_rng);
    auto diag_rng = rng.derive("diag");
    const auto d = reward_model_diagnostics(model, env, 2000, diag_rng);
    std::cout << "signed gap on novel actions: " << d.novel.signed_gap << ", supported: " << d.supported.signed_gap
              << '\n';
    EXPECT_NE(d.novel.signed_gap, 0.0);
    std::ostringstream csv;
    write_diagnostics_csv(csv, d);
    EXPECT_EQ(csv.str().rfind("partition,source,bin_low,bin_high,count\n", 0), 0u);
}
