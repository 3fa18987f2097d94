#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeopl/core.hpp"
#include "safeopl/environment.hpp"
#include "safeopl/mlp.hpp"

namespace safeopl {

// Anything giving qhat(x_i, e_a) for every context row and action-feature row.
template <class M>
concept RewardPredictor = requires(const M& m, const Matrix& contexts, const Matrix& features) {
    { m.predict_matrix(contexts, features) } -> std::convertible_to<Matrix>;
};

enum class RewardModelVariant { NaiveMean, MinEnsemble, Cql };

inline const char* variant_name(RewardModelVariant v) {
    switch (v) {
        case RewardModelVariant::NaiveMean: return "naive_mean";
        case RewardModelVariant::MinEnsemble: return "min_ensemble";
        case RewardModelVariant::Cql: return "cql";
    }
    return "?";
}

inline RewardModelVariant parse_variant(const std::string& s) {
    if (s == "naive_mean") return RewardModelVariant::NaiveMean;
    if (s == "min_ensemble") return RewardModelVariant::MinEnsemble;
    if (s == "cql") return RewardModelVariant::Cql;
    throw std::invalid_argument("unknown reward model variant: " + s);
}

struct RewardModelConfig {
    std::vector<int> hidden_widths{100, 10};
    int n_members = 5;
    int epochs = 30;
    int batch_size = 256;
    double learning_rate = 0.01;
    double cql_alpha = 2.0;
    int n_negatives = 5;

    void validate() const {
        if (hidden_widths.size() != 2 || hidden_widths[0] < 1 || hidden_widths[1] < 1) {
            throw std::invalid_argument("reward model hidden_widths must be two positive integers");
        }
        if (n_members < 1 || epochs < 1 || batch_size < 1 || n_negatives < 1) {
            throw std::invalid_argument("reward model counts must be >= 1");
        }
        if (!(learning_rate > 0.0)) throw std::invalid_argument("reward model learning_rate must be > 0");
        if (!(cql_alpha >= 0.0)) throw std::invalid_argument("cql_alpha must be >= 0");
    }
};

// Mean training loss per epoch, one series per member.
struct TrainingReport {
    std::vector<std::vector<double>> epoch_losses;
    bool converged = true;
};

class RewardModel {
public:
    RewardModel() = default;
    RewardModel(RewardModelVariant variant, std::vector<Mlp> members, double cql_alpha)
        : variant_(variant), members_(std::move(members)), cql_alpha_(cql_alpha) {
        if (members_.empty()) throw std::invalid_argument("reward model needs at least one member");
    }

    RewardModelVariant variant() const { return variant_; }
    const std::vector<Mlp>& members() const { return members_; }
    double cql_alpha() const { return cql_alpha_; }
    const TrainingReport& report() const { return report_; }
    void set_report(TrainingReport r) { report_ = std::move(r); }

    // Same members aggregated differently (naive_mean <-> min_ensemble).
    [[nodiscard]] RewardModel with_variant(RewardModelVariant v) const {
        RewardModel m = *this;
        m.variant_ = v;
        return m;
    }

    double predict(const Vector& x, const Vector& e) const {
        return predict_matrix(Matrix(x.transpose()), Matrix(e.transpose()))(0, 0);
    }

    Matrix predict_matrix(const Matrix& contexts, const Matrix& features) const {
        Matrix agg;
        for (std::size_t j = 0; j < members_.size(); ++j) {
            Matrix q = sigmoid(members_[j].forward_pairs(contexts, features));
            if (j == 0) {
                agg = std::move(q);
            } else if (variant_ == RewardModelVariant::MinEnsemble) {
                agg = agg.cwiseMin(q);
            } else {
                agg += q;
            }
        }
        if (variant_ != RewardModelVariant::MinEnsemble) agg /= static_cast<double>(members_.size());
        return agg;
    }

private:
    RewardModelVariant variant_ = RewardModelVariant::NaiveMean;
    std::vector<Mlp> members_;
    double cql_alpha_ = 0.0;
    TrainingReport report_;
};

namespace detail {

inline Matrix pair_inputs(const Matrix& contexts, std::span<const std::size_t> rows, std::span<const int> actions,
                          const Matrix& features) {
    Matrix in(static_cast<Eigen::Index>(rows.size()), contexts.cols() + features.cols());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const auto r = static_cast<Eigen::Index>(j);
        in.row(r).head(contexts.cols()) = contexts.row(static_cast<Eigen::Index>(rows[j]));
        in.row(r).tail(features.cols()) = features.row(actions[j]);
    }
    return in;
}

inline double bce(double logit, double r) {
    // log(1 + exp(-|z|)) + max(z, 0) - r z, stable for large |z|.
    return std::log1p(std::exp(-std::abs(logit))) + std::max(logit, 0.0) - r * logit;
}

}  // namespace detail

// Mini-batch gradient descent on BCE over the rows `sample_rows` (may repeat,
// as in a bootstrap), plus alpha * mean(qhat(x, a') - qhat(x, a_i)) with a'
// drawn uniformly from all actions when alpha > 0.
inline std::vector<double> train_reward_member(Mlp& net, const BanditDataset& data,
                                               const std::vector<std::size_t>& sample_rows, const Matrix& features,
                                               const RewardModelConfig& cfg, double alpha, RngStream& rng) {
    const auto& actions = data.actions();
    const auto& rewards = data.rewards();
    const auto& contexts = data.contexts();
    const int n_actions = static_cast<int>(features.rows());
    std::vector<std::size_t> order = sample_rows;
    std::vector<double> losses;
    Mlp::Tape tape, neg_tape;
    std::vector<int> batch_actions, neg_actions;
    std::vector<std::size_t> neg_rows;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const std::span<const std::size_t> rows(order.data() + start, end - start);
            const double b = static_cast<double>(rows.size());
            batch_actions.resize(rows.size());
            for (std::size_t j = 0; j < rows.size(); ++j) batch_actions[j] = actions[rows[j]];

            const Matrix logits = net.forward(detail::pair_inputs(contexts, rows, batch_actions, features), tape);
            Matrix d(logits.rows(), 1);
            double batch_loss = 0.0;
            for (Eigen::Index j = 0; j < logits.rows(); ++j) {
                const double z = logits(j, 0);
                const double r = rewards[static_cast<Eigen::Index>(rows[static_cast<std::size_t>(j)])];
                const double p = sigmoid(z);
                batch_loss += detail::bce(z, r);
                d(j, 0) = p - r;
                if (alpha > 0.0) {
                    batch_loss -= alpha * p;
                    d(j, 0) -= alpha * p * (1.0 - p);
                }
            }
            Vector grad = net.backward(tape, d);

            if (alpha > 0.0) {
                const auto k = static_cast<std::size_t>(cfg.n_negatives);
                neg_rows.resize(rows.size() * k);
                neg_actions.resize(rows.size() * k);
                for (std::size_t j = 0; j < rows.size(); ++j) {
                    for (std::size_t t = 0; t < k; ++t) {
                        neg_rows[j * k + t] = rows[j];
                        neg_actions[j * k + t] = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_actions)));
                    }
                }
                const Matrix neg_logits =
                    net.forward(detail::pair_inputs(contexts, neg_rows, neg_actions, features), neg_tape);
                Matrix dn(neg_logits.rows(), 1);
                for (Eigen::Index j = 0; j < neg_logits.rows(); ++j) {
                    const double p = sigmoid(neg_logits(j, 0));
                    batch_loss += alpha * p / static_cast<double>(k);
                    dn(j, 0) = alpha * p * (1.0 - p) / static_cast<double>(k);
                }
                grad += net.backward(neg_tape, dn);
            }
            net.params() -= (cfg.learning_rate / b) * grad;
            epoch_loss += batch_loss;
        }
        losses.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return losses;
}

inline RewardModel train_reward_model(const BanditDataset& data, const Matrix& action_features,
                                      const RewardModelConfig& cfg, RewardModelVariant variant, RngStream& rng) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("empty dataset");
    if (!data.rewards_binary()) throw std::invalid_argument("reward model training requires binary rewards");
    const int input_dim = data.context_dim() + static_cast<int>(action_features.cols());
    const std::vector<int> widths{input_dim, cfg.hidden_widths[0], cfg.hidden_widths[1], 1};
    const std::size_t n = data.size();

    std::vector<Mlp> members;
    TrainingReport report;
    const bool cql = variant == RewardModelVariant::Cql;
    const int n_members = cql ? 1 : cfg.n_members;
    for (int m = 0; m < n_members; ++m) {
        auto member_rng = rng.derive(static_cast<std::uint64_t>(m));
        auto init_rng = member_rng.derive("init");
        auto boot_rng = member_rng.derive("bootstrap");
        auto sgd_rng = member_rng.derive("sgd");
        Mlp net(widths);
        net.init_glorot_uniform(init_rng);
        std::vector<std::size_t> rows(n);
        if (cql) {
            std::iota(rows.begin(), rows.end(), std::size_t{0});
        } else {
            for (auto& r : rows) r = static_cast<std::size_t>(boot_rng.below(n));
        }
        auto losses = train_reward_member(net, data, rows, action_features, cfg, cql ? cfg.cql_alpha : 0.0, sgd_rng);
        if (!(losses.back() <= losses.front())) report.converged = false;
        report.epoch_losses.push_back(std::move(losses));
        members.push_back(std::move(net));
    }
    RewardModel model(variant, std::move(members), cql ? cfg.cql_alpha : 0.0);
    model.set_report(std::move(report));
    return model;
}

// alpha * mean_i(mean_j qhat(x_i, a'_ij) - qhat(x_i, a_i)); row i of
// `negatives` holds the predictions at the sampled actions a'_ij.
inline double cql_penalty(const Vector& logged, const Matrix& negatives, double alpha) {
    if (negatives.rows() != logged.size()) throw std::invalid_argument("penalty inputs differ in length");
    return alpha * (negatives.rowwise().mean() - logged).mean();
}

struct ExtrapolationGap {
    double mse_supported = 0.0;
    double mse_novel = 0.0;
};

template <RewardPredictor M>
ExtrapolationGap extrapolation_gap(const M& model, const Environment& env, const Matrix& contexts) {
    const Matrix qhat = model.predict_matrix(contexts, env.action_features());
    const Matrix q = env.reward_matrix(contexts);
    const Matrix sq = (qhat - q).array().square().matrix();
    const auto ns = env.n_supported();
    const auto nn = env.n_novel();
    return {sq.leftCols(ns).mean(), sq.rightCols(nn).mean()};
}

}  // namespace safeopl
