#include <gtest/gtest.h>

#include <vector>

#include <contextclip/encoders.hpp>
#include <contextclip/grad_check.hpp>
#include <contextclip/losses.hpp>

#include "fixtures.hpp"

using namespace contextclip;

namespace {

TEST(GradCheck, SquareAtThree) {
    const std::vector<double> x{3.0};
    const auto r = grad_check([](const Tensor& t) { return sum(t * t); }, x, 1e-5);
    EXPECT_EQ(r.analytic[0], 6.0);
    EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
    const std::vector<double> x{1.0, -2.0};
    const auto r = grad_check([](const Tensor&) { return Tensor::scalar(4.0); }, x, 1e-5);
    EXPECT_EQ(r.max_rel_error, 0.0);
    EXPECT_EQ(r.analytic, (std::vector<double>{0.0, 0.0}));
}

TEST(GradCheck, TotalLossOnFourPairs) {
    contextclip::Rng rng(2024);
    const std::size_t n = 4, d = 8;
    const std::vector<double> x = fixtures::gaussian_vector(rng, 2 * n * d);
    const LossConfig cfg;
    const auto f = [&](const Tensor& t) {
        const Tensor img = l2_normalize_rows(view(t, 0, {n, d}), kNormGuard);
        const Tensor txt = l2_normalize_rows(view(t, n * d, {n, d}), kNormGuard);
        return total_loss(img, txt, img, txt, cfg).value;
    };
    EXPECT_LT(grad_check(f, x, 1e-5).max_rel_error, 1e-4);
}

TEST(GradCheck, NonPositiveStepIsRejected) {
    const std::vector<double> x{1.0};
    EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 0.0), ConfigError);
}

TEST(GradCheck, NonFiniteFunctionIsRejected) {
    const std::vector<double> x{1.0};
    EXPECT_THROW(grad_check([](const Tensor&) { return Tensor::scalar(1.0 / 0.0); }, x, 1e-5), NumericError);
}

}  // namespace
