#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/environment.hpp"
#include "safeopl/policy.hpp"
#include "safeopl/reward_model.hpp"

namespace safeopl {

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

// Fresh contexts with the exact reward means at every action, so policy
// values only need the policy's action probabilities.
struct EvaluationSet {
    Matrix contexts;
    Matrix q;
    int n_supported = 0;
};

inline EvaluationSet make_evaluation_set(const Environment& env, std::size_t n_contexts, RngStream& rng) {
    if (n_contexts < 1) throw std::invalid_argument("n_contexts must be >= 1");
    EvaluationSet set;
    set.contexts = env.sample_contexts(n_contexts, rng);
    set.q = env.reward_matrix(set.contexts);
    set.n_supported = env.n_supported();
    return set;
}

inline Estimate mean_and_std_error(const Vector& per_context) {
    const double n = static_cast<double>(per_context.size());
    const double mean = per_context.mean();
    if (per_context.size() < 2) return {mean, 0.0};
    const double var = (per_context.array() - mean).square().sum() / (n - 1.0);
    return {mean, std::sqrt(var / n)};
}

// Per-context values are sum_a pi(a|x) q(x, a) computed exactly; only the
// context draw is Monte Carlo.
template <StochasticPolicy P>
Estimate exact_policy_value(const P& policy, const EvaluationSet& set) {
    return mean_and_std_error(policy.probabilities(set.contexts).cwiseProduct(set.q).rowwise().sum());
}

template <StochasticPolicy P>
Estimate exact_policy_value(const Environment& env, const P& policy, std::size_t n_contexts, RngStream& rng) {
    return exact_policy_value(policy, make_evaluation_set(env, n_contexts, rng));
}

inline Estimate logging_policy_value(const Environment& env, const LoggingPolicySpec& spec, const EvaluationSet& set) {
    return mean_and_std_error(env.logging_probs_from_rewards(spec, set.q).cwiseProduct(set.q).rowwise().sum());
}

// Probability mass on actions outside A0, averaged over contexts.
template <StochasticPolicy P>
Estimate novelty(const P& policy, const Matrix& contexts, int n_supported) {
    const Matrix probs = policy.probabilities(contexts);
    return mean_and_std_error(probs.rightCols(probs.cols() - n_supported).rowwise().sum());
}

template <StochasticPolicy P>
Estimate novelty(const Environment& env, const P& policy, std::size_t n_contexts, RngStream& rng) {
    if (n_contexts < 1) throw std::invalid_argument("n_contexts must be >= 1");
    return novelty(policy, env.sample_contexts(n_contexts, rng), env.n_supported());
}

inline double violation_rate(const std::vector<double>& values, double threshold) {
    if (values.empty()) throw std::invalid_argument("empty value list");
    std::size_t violated = 0;
    for (double v : values) violated += v < threshold ? 1 : 0;
    return static_cast<double>(violated) / static_cast<double>(values.size());
}

struct MetricReport {
    double true_value = 0.0;
    double relative_value = 0.0;
    double novelty = 0.0;
    bool violated = false;
};

template <StochasticPolicy P>
MetricReport evaluate_policy(const P& policy, const EvaluationSet& set, double logging_value, double threshold) {
    MetricReport m;
    m.true_value = exact_policy_value(policy, set).value;
    m.relative_value = m.true_value / logging_value;
    m.novelty = novelty(policy, set.contexts, set.n_supported).value;
    m.violated = m.true_value < threshold;
    return m;
}

enum class Decision { Positive, Negative };
enum class Truth { SafeImproved, NotImproved };

// Positive iff the estimate strictly beats the on-policy baseline.
inline Decision validation_hypothesis_test(double estimate, double baseline_on_policy) {
    if (!std::isfinite(estimate) || !std::isfinite(baseline_on_policy)) {
        throw std::invalid_argument("hypothesis test inputs must be finite");
    }
    return estimate > baseline_on_policy ? Decision::Positive : Decision::Negative;
}

// Type I: positive among truly not-improved. Type II: negative among truly improved.
struct ConfusionTally {
    std::size_t true_positive = 0;
    std::size_t false_negative = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;

    void add(Decision d, Truth t) {
        if (t == Truth::SafeImproved) {
            (d == Decision::Positive ? true_positive : false_negative)++;
        } else {
            (d == Decision::Positive ? false_positive : true_negative)++;
        }
    }

    double type1_rate() const {
        const auto n = false_positive + true_negative;
        return n == 0 ? 0.0 : static_cast<double>(false_positive) / static_cast<double>(n);
    }

    double type2_rate() const {
        const auto n = true_positive + false_negative;
        return n == 0 ? 0.0 : static_cast<double>(false_negative) / static_cast<double>(n);
    }
};

struct PartitionDiagnostics {
    double mean_predicted = 0.0;
    double mean_true = 0.0;
    double signed_gap = 0.0;  // mean(predicted - true)
    double mse = 0.0;
    std::vector<std::size_t> predicted_histogram;
    std::vector<std::size_t> true_histogram;
};

struct RewardDiagnostics {
    int bins = 20;
    PartitionDiagnostics supported;
    PartitionDiagnostics novel;
};

namespace detail {

inline PartitionDiagnostics summarize_partition(const Matrix& predicted, const Matrix& truth, int bins) {
    PartitionDiagnostics d;
    d.predicted_histogram.assign(static_cast<std::size_t>(bins), 0);
    d.true_histogram.assign(static_cast<std::size_t>(bins), 0);
    auto bin_of = [bins](double v) { return static_cast<std::size_t>(std::clamp(static_cast<int>(v * bins), 0, bins - 1)); };
    for (Eigen::Index i = 0; i < predicted.size(); ++i) {
        d.predicted_histogram[bin_of(predicted.data()[i])]++;
        d.true_histogram[bin_of(truth.data()[i])]++;
    }
    d.mean_predicted = predicted.mean();
    d.mean_true = truth.mean();
    d.signed_gap = (predicted - truth).mean();
    d.mse = (predicted - truth).array().square().mean();
    return d;
}

}  // namespace detail

// Predicted vs exact reward means, split into supported and novel actions.
template <RewardPredictor M>
RewardDiagnostics reward_model_diagnostics(const M& model, const Environment& env, std::size_t n_contexts,
                                           RngStream& rng, int bins = 20) {
    if (bins < 1) throw std::invalid_argument("bins must be >= 1");
    const Matrix contexts = env.sample_contexts(n_contexts, rng);
    const Matrix predicted = model.predict_matrix(contexts, env.action_features());
    const Matrix truth = env.reward_matrix(contexts);
    const int ns = env.n_supported();
    const int nn = env.n_novel();
    RewardDiagnostics out;
    out.bins = bins;
    out.supported = detail::summarize_partition(predicted.leftCols(ns), truth.leftCols(ns), bins);
    out.novel = detail::summarize_partition(predicted.rightCols(nn), truth.rightCols(nn), bins);
    return out;
}

// Long-format histogram: partition,source,bin_low,bin_high,count.
inline void write_diagnostics_csv(std::ostream& os, const RewardDiagnostics& d) {
    os << "partition,source,bin_low,bin_high,count\n";
    auto emit = [&](const char* part, const char* source, const std::vector<std::size_t>& h) {
        for (std::size_t b = 0; b < h.size(); ++b) {
            os << part << ',' << source << ',' << static_cast<double>(b) / d.bins << ','
               << static_cast<double>(b + 1) / d.bins << ',' << h[b] << '\n';
        }
    };
    emit("supported", "predicted", d.supported.predicted_histogram);
    emit("supported", "true", d.supported.true_histogram);
    emit("novel", "predicted", d.novel.predicted_histogram);
    emit("novel", "true", d.novel.true_histogram);
}

}  // namespace safeopl
