#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "test_support.hpp"

using namespace safeopl;

namespace {

BanditDataset make_data(std::size_t n, int dx = 2) {
    BanditDataset d(dx, "pi0");
    for (std::size_t i = 0; i < n; ++i) {
        LoggedSample s;
        s.context = Vector::Constant(dx, static_cast<double>(i));
        s.action = static_cast<int>(i % 3);
        s.reward = static_cast<double>(i % 2);
        s.logging_propensity = 0.5;
        d.push_back(s);
    }
    return d;
}

std::string error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(SplitDataset, EvenCountSplitsInHalf) {
    RngStream rng(1, 0);
    const auto d = split_dataset(make_data(10), 0.5, rng);
    EXPECT_EQ(d.fold_size(Fold::S1), 5u);
    EXPECT_EQ(d.fold_size(Fold::S2), 5u);
}

TEST(SplitDataset, OddCountGivesS1TheExtraSample) {
    RngStream rng(1, 0);
    const auto d = split_dataset(make_data(11), 0.5, rng);
    EXPECT_EQ(d.fold_size(Fold::S1), 6u);
    EXPECT_EQ(d.fold_size(Fold::S2), 5u);
}

TEST(SplitDataset, SameSeedSameAssignment) {
    RngStream a(3, 9), b(3, 9);
    EXPECT_EQ(split_dataset(make_data(50), 0.5, a).folds(), split_dataset(make_data(50), 0.5, b).folds());
}

TEST(SplitDataset, FoldsAreDisjointAndCoverTheData) {
    RngStream rng(4, 0);
    const auto d = split_dataset(make_data(37), 0.3, rng);
    const auto s1 = d.fold(Fold::S1), s2 = d.fold(Fold::S2);
    EXPECT_EQ(s1.size() + s2.size(), 37u);
    EXPECT_FALSE(folds_overlap(s1, s2));
    std::set<std::uint64_t> ids(s1.sample_ids().begin(), s1.sample_ids().end());
    ids.insert(s2.sample_ids().begin(), s2.sample_ids().end());
    EXPECT_EQ(ids.size(), 37u);
    for (auto f : d.folds()) EXPECT_NE(f, Fold::None);
}

TEST(SplitDataset, PreservesOrderWithinFolds) {
    RngStream rng(5, 0);
    const auto s1 = split_dataset(make_data(40), 0.5, rng).fold(Fold::S1);
    EXPECT_TRUE(std::is_sorted(s1.sample_ids().begin(), s1.sample_ids().end()));
    for (std::size_t i = 0; i < s1.size(); ++i) {
        EXPECT_EQ(s1.contexts()(static_cast<Eigen::Index>(i), 0), static_cast<double>(s1.sample_ids()[i]));
    }
}

TEST(SplitDataset, EmptyDatasetIsAnError) {
    RngStream rng(1, 0);
    EXPECT_EQ(error_of([&] { split_dataset(BanditDataset(2, "pi0"), 0.5, rng); }), "empty dataset");
}

TEST(Subsample, FullSizeIsAPermutation) {
    RngStream rng(2, 0);
    const auto s = subsample(make_data(20), 20, rng);
    std::set<std::uint64_t> ids(s.sample_ids().begin(), s.sample_ids().end());
    EXPECT_EQ(ids.size(), 20u);
}

TEST(Subsample, ZeroIsAnError) {
    RngStream rng(2, 0);
    EXPECT_THROW(subsample(make_data(5), 0, rng), std::invalid_argument);
}

TEST(Subsample, TooManyIsAnError) {
    RngStream rng(2, 0);
    EXPECT_EQ(error_of([&] { subsample(make_data(5), 6, rng); }), "insufficient samples");
}

TEST(Subsample, SelectionFrequencyIsUniform) {
    const auto data = make_data(1000, 1);
    std::vector<int> hits(1000, 0);
    RngStream root(7, 0);
    for (int rep = 0; rep < 1000; ++rep) {
        auto rng = root.derive(static_cast<std::uint64_t>(rep));
        const auto sub = subsample(data, 200, rng);
        for (auto id : sub.sample_ids()) hits[id]++;
    }
    for (int h : hits) {
        EXPECT_GE(h / 1000.0, 0.15);
        EXPECT_LE(h / 1000.0, 0.25);
    }
}

TEST(Subsample, DeterministicUnderFixedRng) {
    RngStream a(8, 1), b(8, 1);
    EXPECT_EQ(subsample(make_data(100), 10, a).sample_ids(), subsample(make_data(100), 10, b).sample_ids());
}

TEST(BanditDataset, RejectsNonPositivePropensity) {
    BanditDataset d(1, "pi0");
    LoggedSample s{Vector::Zero(1), 0, 1.0, 0.0};
    EXPECT_EQ(error_of([&] { d.push_back(s); }), "invalid propensity");
    s.logging_propensity = 1.5;
    EXPECT_THROW(d.push_back(s), std::invalid_argument);
}

TEST(BanditDataset, RejectsMismatchedColumns) {
    EXPECT_THROW(BanditDataset(Matrix::Zero(3, 2), {0, 1}, Vector::Zero(3), Vector::Ones(3), "pi0"),
                 std::invalid_argument);
}

TEST(BanditDataset, ProbeCountsActionAndRewardReads) {
    auto d = make_data(4);
    auto probe = std::make_shared<AccessProbe>();
    d.attach_probe(probe);
    (void)d.contexts();
    (void)d.propensities();
    EXPECT_EQ(probe->reads.load(), 0);
    (void)d.actions();
    (void)d.rewards();
    (void)d.sample(0);
    EXPECT_EQ(probe->reads.load(), 3);
}

TEST(BanditDataset, AppendOffsetsIds) {
    auto a = make_data(3);
    a.append(make_data(2));
    EXPECT_EQ(a.size(), 5u);
    std::set<std::uint64_t> ids(a.sample_ids().begin(), a.sample_ids().end());
    EXPECT_EQ(ids.size(), 5u);
}

TEST(BanditDataset, OverlapNeedsSameOrigin) {
    auto a = make_data(3);
    auto b = make_data(3);
    EXPECT_TRUE(folds_overlap(a, b));
    b.set_origin_policy_id("pi1");
    EXPECT_FALSE(folds_overlap(a, b));
}

TEST(Fold, NamesRoundTrip) {
    for (auto f : {Fold::None, Fold::S1, Fold::S2}) EXPECT_EQ(parse_fold(fold_name(f)), f);
    EXPECT_THROW(parse_fold("S3"), std::invalid_argument);
}
