#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/environment.hpp"
#include "safeopl/estimators.hpp"
#include "safeopl/learners.hpp"
#include "safeopl/reward_model.hpp"

namespace safeopl {

struct DeploymentPlan {
    int K = 1;
    std::size_t total_samples = 20000;
    // 0 means total_samples / K.
    std::size_t samples_per_stage = 0;
    double base_threshold = 0.0;  // C
    double delta = 0.05;
    // When > 0, on-policy estimates are capped at clip_factor * clip_reference
    // before entering the margin.
    double clip_factor = 0.0;
    double clip_reference = 0.0;
    bool warm_start = false;

    std::size_t stage_samples() const {
        return samples_per_stage > 0 ? samples_per_stage : total_samples / static_cast<std::size_t>(K);
    }

    double clip(double v) const { return clip_factor > 0.0 ? std::min(v, clip_factor * clip_reference) : v; }

    void validate() const {
        if (K < 1) throw std::invalid_argument("K must be >= 1");
        if (stage_samples() < 2) throw std::invalid_argument("each stage needs at least 2 samples");
        if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
        if (clip_factor < 0.0) throw std::invalid_argument("clip_factor must be >= 0");
    }
};

struct StageRecord {
    int k = 0;
    SoftmaxPolicy policy;
    std::string trained_on;  // origin id of the folds pi_k was trained on
    double effective_threshold = 0.0;
    double hcope_bound = 0.0;
    LagrangianState state;
    // Filled once pi_k has been deployed.
    std::optional<BanditDataset> collected;
    std::optional<double> on_policy_estimate;
    std::optional<double> cumulative_margin;
};

class DeploymentHistory {
public:
    void append(StageRecord r) {
        if (r.k != static_cast<int>(stages_.size()) + 1) throw std::invalid_argument("stage records must be appended in order");
        stages_.push_back(std::move(r));
    }
    StageRecord& stage(int k) { return stages_.at(static_cast<std::size_t>(k - 1)); }
    const StageRecord& stage(int k) const { return stages_.at(static_cast<std::size_t>(k - 1)); }
    const std::vector<StageRecord>& stages() const { return stages_; }
    int size() const { return static_cast<int>(stages_.size()); }

private:
    std::vector<StageRecord> stages_;
};

// kC - sum_{k' < k} clip(Vhat_on(pi_k')); C itself for k = 1.
inline double effective_threshold(const DeploymentPlan& plan, const DeploymentHistory& history, int k) {
    if (k < 1) throw std::invalid_argument("stage index must be >= 1");
    if (history.size() < k - 1) throw std::invalid_argument("missing prior stages");
    double past = 0.0;
    for (int j = 1; j < k; ++j) {
        const auto& est = history.stage(j).on_policy_estimate;
        if (!est) throw std::invalid_argument("missing prior stages");
        past += plan.clip(*est);
    }
    return k * plan.base_threshold - past;
}

// sum_{k' <= k} clip(Vhat_on(pi_k')) - kC.
inline double cumulative_margin(const DeploymentHistory& history, const DeploymentPlan& plan, int k) {
    if (history.size() < k) throw std::invalid_argument("missing stages");
    double total = 0.0;
    for (int j = 1; j <= k; ++j) {
        const auto& est = history.stage(j).on_policy_estimate;
        if (!est) throw std::invalid_argument("missing stages");
        total += plan.clip(*est);
    }
    return total - k * plan.base_threshold;
}

// Deploys `policy` for n interactions; propensities are pi(a|x).
template <StochasticPolicy P>
BanditDataset collect_on_policy_data(const Environment& env, const P& policy, std::size_t n, RngStream& rng,
                                     const std::string& origin) {
    auto ctx_rng = rng.derive("contexts");
    auto act_rng = rng.derive("actions");
    auto rew_rng = rng.derive("rewards");
    Matrix contexts = env.sample_contexts(n, ctx_rng);
    const Matrix probs = policy.probabilities(contexts);
    const Matrix q = env.reward_matrix(contexts);
    std::vector<int> actions(n);
    Vector rewards(static_cast<Eigen::Index>(n));
    Vector propensities(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
        const int a = sample_from(probs.row(i).transpose(), act_rng);
        actions[static_cast<std::size_t>(i)] = a;
        propensities[i] = probs(i, a);
        rewards[i] = rew_rng.uniform() < q(i, a) ? 1.0 : 0.0;
    }
    return BanditDataset(std::move(contexts), std::move(actions), std::move(rewards), std::move(propensities), origin);
}

inline RngStream depsue_stage_rng(const RngStream& rng, int k, std::string_view purpose) {
    return rng.derive(static_cast<std::uint64_t>(k)).derive(purpose);
}

inline constexpr std::size_t kMinStageS2 = 40;

// Stage k trains on an even split of D_{k-1} (D_0 from pi0 for k = 1) against
// effective_threshold(k), then deploys pi_k to collect D_k. The reward model
// for stage k is fit on D_0..D_{k-2} plus the S1 fold of D_{k-1}, so the S2
// fold used by the lower bound stays independent of pi_k.
inline DeploymentHistory run_depsue(const Environment& env, const LoggingPolicySpec& logging_spec,
                                    const DeploymentPlan& plan, const RewardModelConfig& model_cfg,
                                    const TrainConfig& train_cfg, const HcopeConfig& hcope_cfg, RngStream& rng,
                                    const BanditDataset* initial_data = nullptr) {
    plan.validate();
    const std::size_t m = plan.stage_samples();
    BanditDataset previous;
    if (initial_data) {
        previous = *initial_data;
    } else {
        auto data_rng = rng.derive("stage0_data");
        previous = generate_logged_data(env, logging_spec, m, data_rng, "pi0");
    }
    BanditDataset older;  // D_0..D_{k-2}
    DeploymentHistory history;
    for (int k = 1; k <= plan.K; ++k) {
        auto split_rng = depsue_stage_rng(rng, k, "split");
        const BanditDataset split = split_dataset(previous, 0.5, split_rng);
        const BanditDataset s1 = split.fold(Fold::S1);
        const BanditDataset s2 = split.fold(Fold::S2);
        if (s2.size() < kMinStageS2) throw std::invalid_argument("stage data too small");

        BanditDataset model_data = older;
        model_data.append(s1);
        auto model_rng = depsue_stage_rng(rng, k, "reward_model");
        const RewardModel model =
            train_reward_model(model_data, env.action_features(), model_cfg, RewardModelVariant::NaiveMean, model_rng);

        StageRecord rec;
        rec.k = k;
        rec.trained_on = previous.origin_policy_id();
        rec.effective_threshold = effective_threshold(plan, history, k);
        const SafetySpec safety{rec.effective_threshold, plan.delta};
        auto train_rng = depsue_stage_rng(rng, k, "train");
        const SoftmaxPolicy* warm = (plan.warm_start && k > 1) ? &history.stage(k - 1).policy : nullptr;
        auto result = train_safe_opg(s1, s2, safety, hcope_cfg, model, env.action_features(), train_cfg, train_rng, warm);
        rec.policy = std::move(result.policy);
        rec.state = std::move(result.state);
        rec.hcope_bound = rec.state.trace.empty() ? std::numeric_limits<double>::quiet_NaN()
                                                  : rec.state.trace.back().lower_bound;
        history.append(std::move(rec));

        auto deploy_rng = depsue_stage_rng(rng, k, "deploy");
        auto& stage = history.stage(k);
        BanditDataset collected = collect_on_policy_data(env, stage.policy, m, deploy_rng, "pi" + std::to_string(k));
        stage.on_policy_estimate = on_policy_value(collected);
        stage.collected = collected;
        stage.cumulative_margin = cumulative_margin(history, plan, k);

        older.append(previous);
        previous = std::move(collected);
    }
    return history;
}

}  // namespace safeopl
