#include <gtest/gtest.h>

#include "zsoc/metrics.hpp"

#include <cmath>
#include <random>

using namespace zsoc;

TEST(MacroF1, PerfectClassifier) { EXPECT_EQ(macro_f1({50, 0, 50, 0}), 100.0); }

TEST(MacroF1, AllPositivePredictions) {
    const Confusion c{50, 50, 0, 0};
    EXPECT_NEAR(f1_positive(c), 200.0 / 3.0, 1e-12);
    EXPECT_EQ(f1_negative(c), 0.0);
    EXPECT_NEAR(macro_f1(c), 100.0 / 3.0, 1e-12);
}

TEST(MacroF1, MixedConfusion) {
    // tp=40 fn=10 fp=20 tn=30: F1+ = 80/110, F1- = 60/90.
    const Confusion c{40, 20, 30, 10};
    EXPECT_NEAR(macro_f1(c), 100.0 * (80.0 / 110.0 + 60.0 / 90.0) / 2.0, 1e-12);
    EXPECT_NEAR(macro_f1(c), 69.696969696970, 1e-9);
}

TEST(MacroF1, SwappingRolesKeepsMacro) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Confusion c{rng() % 60, rng() % 60, rng() % 60, rng() % 60};
        EXPECT_EQ(f1_positive(c.swapped()), f1_negative(c));
        EXPECT_EQ(f1_negative(c.swapped()), f1_positive(c));
        EXPECT_NEAR(macro_f1(c.swapped()), macro_f1(c), 1e-12);
    }
}

TEST(MacroF1, ZeroDenominatorIsZero) {
    EXPECT_EQ(f1_positive({0, 0, 10, 0}), 0.0);
    EXPECT_EQ(macro_f1({0, 0, 10, 0}), 50.0);
}

TEST(Accuracy, Cases) {
    EXPECT_EQ(accuracy({50, 0, 50, 0}), 100.0);
    EXPECT_EQ(accuracy({25, 25, 25, 25}), 50.0);
    EXPECT_EQ(accuracy({40, 20, 30, 10}), 70.0);
}

TEST(Rates, Cases) {
    auto r = fpr_fnr({50, 0, 50, 0});
    EXPECT_EQ(r.fpr, 0.0);
    EXPECT_EQ(r.fnr, 0.0);
    r = fpr_fnr({50, 50, 0, 0});
    EXPECT_EQ(r.fpr, 100.0);
    EXPECT_EQ(r.fnr, 0.0);
    r = fpr_fnr({40, 20, 30, 10});
    EXPECT_EQ(r.fpr, 40.0);
    EXPECT_EQ(r.fnr, 20.0);
    EXPECT_THROW(fpr_fnr({5, 0, 0, 5}), Error);
    EXPECT_THROW(fpr_fnr({0, 5, 5, 0}), Error);
}

TEST(Auc, Cases) {
    const std::vector<double> p1{0.9, 0.8}, n1{0.1, 0.2};
    EXPECT_EQ(auc(p1, n1), 100.0);
    const std::vector<double> p2{0.5}, n2{0.5};
    EXPECT_EQ(auc(p2, n2), 50.0);
    const std::vector<double> p3{0.8, 0.4}, n3{0.6, 0.2};
    EXPECT_EQ(auc(p3, n3), 75.0);
    const std::vector<double> empty;
    EXPECT_THROW(auc(empty, n3), Error);
}

TEST(Auc, InvariantUnderIncreasingTransform) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> p(20), n(30);
        for (auto& x : p) x = std::round(u(rng) * 10) / 10; // plenty of ties
        for (auto& x : n) x = std::round(u(rng) * 10) / 10;
        auto tp = p, tn = n;
        for (auto& x : tp) x = std::exp(3 * x) + 2;
        for (auto& x : tn) x = std::exp(3 * x) + 2;
        EXPECT_EQ(auc(p, n), auc(tp, tn));
    }
}

TEST(Tally, CountsEachCell) {
    const std::vector<std::uint8_t> truth{1, 1, 0, 0, 1}, pred{1, 0, 1, 0, 1};
    EXPECT_EQ(tally(truth, pred), (Confusion{2, 1, 1, 1}));
}

TEST(Aggregate, Cases) {
    const std::vector<double> constant{7.5, 7.5, 7.5};
    auto a = aggregate(constant);
    EXPECT_EQ(a.mean, 7.5);
    EXPECT_EQ(a.ci95, 0.0);

    const std::vector<double> two{0.0, 100.0};
    a = aggregate(two);
    EXPECT_EQ(a.mean, 50.0);
    EXPECT_NEAR(a.ci95, 1.96 * std::sqrt(5000.0) / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(a.ci95, 98.0, 1e-9);

    const std::vector<double> one{42.0};
    a = aggregate(one);
    EXPECT_EQ(a.mean, 42.0);
    EXPECT_EQ(a.ci95, 0.0);

    EXPECT_THROW(aggregate(std::vector<double>{}), Error);
}
