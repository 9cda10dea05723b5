#include <gtest/gtest.h>

#include "support/suites.hpp"

using namespace hagcn;
using namespace hagcn::check;

class GradientCase : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCase, MatchesCentralDifferences) {
    const auto c = gradient_cases().at(GetParam());
    for (std::uint64_t seed = 100; seed < 103; ++seed) {
        const auto r = c.run(seed);
        EXPECT_GT(r.checked, 0u);
        EXPECT_LT(r.max_error, gradient_tolerance(c)) << c.name << " seed " << seed;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCase, ::testing::Range<std::size_t>(0, gradient_cases().size()),
                         [](const auto& info) { return gradient_cases().at(info.param).name; });

class OracleEquivalence : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OracleEquivalence, MatchesLoopOracle) {
    const auto c = oracle_cases().at(GetParam());
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_LE(c.run(seed), 1e-12) << c.name << " seed " << seed;
}

INSTANTIATE_TEST_SUITE_P(AllOracles, OracleEquivalence, ::testing::Range<std::size_t>(0, oracle_cases().size()),
                         [](const auto& info) { return oracle_cases().at(info.param).name; });

TEST(GradientCheck, DetectsAWrongGradient) {
    // relu whose recorded backward is doubled
    Tensor64 x({3}, {0.5, -0.4, 0.9}, true);
    auto broken = [&] {
        auto y = ad::relu(x);
        auto fn = y.node()->backward_fn;
        y.node()->backward_fn = [fn](ad::Node<double>& n) {
            for (auto& g : n.grad) g *= 2.0;
            fn(n);
        };
        return ad::sum(y);
    };
    EXPECT_GT(gradient_check(broken, {x}).max_error, 0.5);
}

TEST(Backward, UnreachableGradientsUntouched) {
    Rng rng(3);
    auto a = random_tensor({2, 2}, rng);
    auto b = random_tensor({2, 2}, rng);
    ad::backward(ad::sum(ad::relu(a)));
    EXPECT_FALSE(b.has_grad());
}
