#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "safeopl/rng.hpp"

namespace safeopl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Fold : std::uint8_t { None, S1, S2 };

inline const char* fold_name(Fold f) {
    switch (f) {
        case Fold::S1: return "S1";
        case Fold::S2: return "S2";
        default: return "none";
    }
}

inline Fold parse_fold(const std::string& s) {
    if (s == "S1") return Fold::S1;
    if (s == "S2") return Fold::S2;
    if (s == "none" || s.empty()) return Fold::None;
    throw std::invalid_argument("unknown fold label: " + s);
}

struct LoggedSample {
    Vector context;
    int action = 0;
    double reward = 0.0;
    double logging_propensity = 1.0;
};

// Counts reads of actions/rewards. Tests attach one to a dataset to check
// which code paths touch a fold.
struct AccessProbe {
    std::atomic<long> reads{0};
};

// Columnar store of logged bandit feedback. Row i is LoggedSample sample(i).
// sample_ids identify rows within the originating collection so that folds
// drawn from the same collection can be checked for overlap.
class BanditDataset {
public:
    BanditDataset() = default;
    BanditDataset(int context_dim, std::string origin_policy_id)
        : contexts_(0, context_dim), origin_(std::move(origin_policy_id)) {}

    BanditDataset(Matrix contexts, std::vector<int> actions, Vector rewards, Vector propensities,
                  std::string origin_policy_id)
        : contexts_(std::move(contexts)),
          actions_(std::move(actions)),
          rewards_(std::move(rewards)),
          propensities_(std::move(propensities)),
          folds_(actions_.size(), Fold::None),
          ids_(actions_.size()),
          origin_(std::move(origin_policy_id)) {
        const auto n = static_cast<Eigen::Index>(actions_.size());
        if (contexts_.rows() != n || rewards_.size() != n || propensities_.size() != n) {
            throw std::invalid_argument("dataset column lengths differ");
        }
        std::iota(ids_.begin(), ids_.end(), std::uint64_t{0});
        validate();
    }

    std::size_t size() const { return actions_.size(); }
    bool empty() const { return actions_.empty(); }
    int context_dim() const { return static_cast<int>(contexts_.cols()); }

    const Matrix& contexts() const { return contexts_; }
    const std::vector<int>& actions() const {
        touch();
        return actions_;
    }
    const Vector& rewards() const {
        touch();
        return rewards_;
    }
    const Vector& propensities() const { return propensities_; }
    const std::vector<Fold>& folds() const { return folds_; }
    const std::vector<std::uint64_t>& sample_ids() const { return ids_; }
    const std::string& origin_policy_id() const { return origin_; }
    void set_origin_policy_id(std::string id) { origin_ = std::move(id); }

    LoggedSample sample(std::size_t i) const {
        touch();
        return {contexts_.row(static_cast<Eigen::Index>(i)).transpose(), actions_[i], rewards_[i], propensities_[i]};
    }

    void push_back(const LoggedSample& s, Fold fold = Fold::None) {
        if (contexts_.cols() == 0 && contexts_.rows() == 0) contexts_.resize(0, s.context.size());
        if (s.context.size() != contexts_.cols()) throw std::invalid_argument("context dimension mismatch");
        check_sample(s.reward, s.logging_propensity);
        const auto n = contexts_.rows();
        contexts_.conservativeResize(n + 1, Eigen::NoChange);
        contexts_.row(n) = s.context.transpose();
        actions_.push_back(s.action);
        rewards_.conservativeResize(n + 1);
        rewards_[n] = s.reward;
        propensities_.conservativeResize(n + 1);
        propensities_[n] = s.logging_propensity;
        folds_.push_back(fold);
        ids_.push_back(ids_.empty() ? 0 : ids_.back() + 1);
    }

    void set_folds(std::vector<Fold> folds) {
        if (folds.size() != size()) throw std::invalid_argument("fold labels must cover every sample");
        folds_ = std::move(folds);
    }

    // Rows at the given positions, in the given order.
    BanditDataset select(std::span<const std::size_t> rows) const {
        BanditDataset out;
        out.contexts_.resize(static_cast<Eigen::Index>(rows.size()), contexts_.cols());
        out.rewards_.resize(static_cast<Eigen::Index>(rows.size()));
        out.propensities_.resize(static_cast<Eigen::Index>(rows.size()));
        out.actions_.reserve(rows.size());
        out.folds_.reserve(rows.size());
        out.ids_.reserve(rows.size());
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto i = rows[j];
            if (i >= size()) throw std::out_of_range("row index out of range");
            const auto r = static_cast<Eigen::Index>(j);
            out.contexts_.row(r) = contexts_.row(static_cast<Eigen::Index>(i));
            out.rewards_[r] = rewards_[static_cast<Eigen::Index>(i)];
            out.propensities_[r] = propensities_[static_cast<Eigen::Index>(i)];
            out.actions_.push_back(actions_[i]);
            out.folds_.push_back(folds_[i]);
            out.ids_.push_back(ids_[i]);
        }
        out.origin_ = origin_;
        out.probe_ = probe_;
        return out;
    }

    // Samples labelled with `f`, in dataset order.
    BanditDataset fold(Fold f) const {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < size(); ++i) {
            if (folds_[i] == f) rows.push_back(i);
        }
        return select(rows);
    }

    std::size_t fold_size(Fold f) const {
        return static_cast<std::size_t>(std::count(folds_.begin(), folds_.end(), f));
    }

    // Concatenation; ids of `other` are offset so rows stay distinguishable.
    void append(const BanditDataset& other) {
        if (other.empty()) return;
        if (!empty() && other.context_dim() != context_dim()) throw std::invalid_argument("context dimension mismatch");
        const auto n = contexts_.rows();
        const auto m = other.contexts_.rows();
        const std::uint64_t offset = ids_.empty() ? 0 : *std::max_element(ids_.begin(), ids_.end()) + 1;
        Matrix c(n + m, other.context_dim());
        if (n > 0) c.topRows(n) = contexts_;
        c.bottomRows(m) = other.contexts_;
        contexts_ = std::move(c);
        rewards_.conservativeResize(n + m);
        rewards_.tail(m) = other.rewards_;
        propensities_.conservativeResize(n + m);
        propensities_.tail(m) = other.propensities_;
        actions_.insert(actions_.end(), other.actions_.begin(), other.actions_.end());
        folds_.insert(folds_.end(), other.folds_.begin(), other.folds_.end());
        for (auto id : other.ids_) ids_.push_back(id + offset);
    }

    void attach_probe(std::shared_ptr<AccessProbe> probe) { probe_ = std::move(probe); }

    bool rewards_binary() const {
        return std::all_of(rewards_.begin(), rewards_.end(), [](double r) { return r == 0.0 || r == 1.0; });
    }

private:
    void touch() const {
        if (probe_) probe_->reads.fetch_add(1, std::memory_order_relaxed);
    }

    static void check_sample(double reward, double propensity) {
        if (!(reward >= 0.0)) throw std::invalid_argument("reward must be nonnegative");
        if (!(propensity > 0.0 && propensity <= 1.0)) throw std::invalid_argument("invalid propensity");
    }

    void validate() const {
        for (Eigen::Index i = 0; i < rewards_.size(); ++i) check_sample(rewards_[i], propensities_[i]);
    }

    Matrix contexts_;
    std::vector<int> actions_;
    Vector rewards_;
    Vector propensities_;
    std::vector<Fold> folds_;
    std::vector<std::uint64_t> ids_;
    std::string origin_;
    std::shared_ptr<AccessProbe> probe_;
};

// True when both folds come from the same collection and share a row.
inline bool folds_overlap(const BanditDataset& a, const BanditDataset& b) {
    if (a.origin_policy_id() != b.origin_policy_id()) return false;
    std::unordered_set<std::uint64_t> seen(a.sample_ids().begin(), a.sample_ids().end());
    return std::any_of(b.sample_ids().begin(), b.sample_ids().end(), [&](auto id) { return seen.contains(id); });
}

// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, RngStream& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

// Exact-count shuffled partition: ceil(fraction_s1 * n) samples go to S1,
// the rest to S2. Sample order is untouched.
inline BanditDataset split_dataset(const BanditDataset& data, double fraction_s1, RngStream& rng) {
    if (data.empty()) throw std::invalid_argument("empty dataset");
    if (!(fraction_s1 > 0.0 && fraction_s1 < 1.0)) throw std::invalid_argument("fraction_s1 must lie in (0, 1)");
    const std::size_t n = data.size();
    // 1e-12 keeps 0.5 * 10 from rounding up through floating error.
    auto n_s1 = static_cast<std::size_t>(std::ceil(fraction_s1 * static_cast<double>(n) - 1e-12));
    n_s1 = std::clamp<std::size_t>(n_s1, 0, n);
    const auto perm = shuffled_indices(n, rng);
    std::vector<Fold> folds(n, Fold::S2);
    for (std::size_t j = 0; j < n_s1; ++j) folds[perm[j]] = Fold::S1;
    BanditDataset out = data;
    out.set_folds(std::move(folds));
    return out;
}

// m samples uniformly without replacement, kept in their original order.
inline BanditDataset subsample(const BanditDataset& data, std::size_t m, RngStream& rng) {
    if (m == 0) throw std::invalid_argument("subsample size must be positive");
    if (m > data.size()) throw std::invalid_argument("insufficient samples");
    auto perm = shuffled_indices(data.size(), rng);
    perm.resize(m);
    std::sort(perm.begin(), perm.end());
    return data.select(perm);
}

}  // namespace safeopl
