#include <gtest/gtest.h>

#include <atomic>
#include <set>
#include <stdexcept>

#include "fls/fls.hpp"

using namespace fls;

TEST(Matrix, ShapeMismatchThrows) {
    EXPECT_THROW(Matrix<float>(2, 3, std::vector<float>(5)), Error);
}

TEST(Matrix, RowViewsAreRowMajor) {
    Matrix<int> m(2, 3, std::vector<int>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(m.row(1)[0], 4);
    EXPECT_EQ(m(0, 2), 3);
}

TEST(Random, DerivedStreamsDiffer) {
    std::set<std::uint64_t> seeds;
    for (const char* name : {"generator", "sampler", "init", "anchors", "batches"}) seeds.insert(derive_seed(42, name));
    EXPECT_EQ(seeds.size(), 5u);
    EXPECT_NE(derive_seed(1, "init"), derive_seed(2, "init"));
    EXPECT_EQ(derive_seed(7, "init"), derive_seed(7, "init"));
}

TEST(Random, SameSeedSameSequence) {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

TEST(Random, RangesRespected) {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform01();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        ASSERT_LT(rng.below(7), 7u);
        const auto v = rng.between(-2, 2);
        ASSERT_GE(v, -2);
        ASSERT_LE(v, 2);
    }
    EXPECT_EQ(rng.below(1), 0u);
}

TEST(Random, NormalMomentsRoughlyStandard) {
    Rng rng(11);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.01);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Parallel, EveryIndexVisitedOnce) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), 7, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) ASSERT_EQ(h.load(), 1);
}

TEST(Parallel, LowestIndexExceptionWins) {
    try {
        parallel_for(100, 4, [](std::size_t i) {
            if (i == 13 || i == 77) throw std::runtime_error("at " + std::to_string(i));
        });
        FAIL() << "expected an exception";
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "at 13");
    }
}

TEST(Parallel, ZeroItemsIsNoop) {
    int calls = 0;
    parallel_for(0, 4, [&](std::size_t) { ++calls; });
    EXPECT_EQ(calls, 0);
}

TEST(EditDistance, Examples) {
    EXPECT_EQ(edit_distance({1, 2, 3}, {1, 2, 3}), 0u);
    EXPECT_EQ(edit_distance({1, 2, 3}, {1, 3}), 1u);
    EXPECT_EQ(edit_distance({}, {4, 5}), 2u);
    EXPECT_EQ(edit_distance({1, 2}, {2, 1}), 2u);
}

TEST(EditDistance, ErrorRateNormalisesByReference) {
    EXPECT_DOUBLE_EQ(error_rate({1, 3}, {1, 2, 3}), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(error_rate({1, 2}, {}), 2.0);
    EXPECT_DOUBLE_EQ(error_rate({}, {}), 0.0);
}

TEST(EditDistance, Symmetric) {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        LabelSequence a(rng.below(8)), b(rng.below(8));
        for (auto& x : a) x = static_cast<std::int32_t>(rng.between(1, 3));
        for (auto& x : b) x = static_cast<std::int32_t>(rng.between(1, 3));
        ASSERT_EQ(edit_distance(a, b), edit_distance(b, a));
        ASSERT_LE(edit_distance(a, b), std::max(a.size(), b.size()));
    }
}
