#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pvcd/ops.hpp"
#include "test_util.hpp"

using namespace pvcd;
using pvcd::testing::random_tensor;
using pvcd::testing::values;

TEST(Tensor, ConstructionAndAccess) {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.dim(-1), 3u);
    EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
    EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
    EXPECT_DOUBLE_EQ(Tensor::scalar(4.5).item(), 4.5);
    EXPECT_THROW(t.item(), ShapeError);
}

TEST(Tensor, BackwardRequiresTrackedScalar) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(mul(x, x).backward(), std::exception);   // not a scalar
    EXPECT_THROW(Tensor::scalar(1.0).backward(), std::exception);  // nothing to differentiate
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
    Tensor x = Tensor::from({3}, {1, -2, 3}, true);
    // d/dx sum(x*x + 3x) = 2x + 3
    sum(add(mul(x, x), scale(x, 3.0))).backward();
    const std::vector<double> grad(x.grad().begin(), x.grad().end());
    EXPECT_EQ(grad, (std::vector<double>{5, -1, 9}));
}

TEST(Tensor, NoGradGuardBuildsNoGraph) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        EXPECT_FALSE(mul(x, x).requires_grad());
    }
    EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Ops, BroadcastAddMatchesLoop) {
    Tensor a = random_tensor({2, 3, 4}, 1);
    Tensor b = random_tensor({3, 1}, 2);
    Tensor c = add(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(c.at({i, j, k}), a.at({i, j, k}) + b.at({j, 0}));
    EXPECT_THROW(add(a, random_tensor({5}, 3)), ShapeError);
}

TEST(Ops, MatmulMatchesTripleLoop) {
    Tensor a = random_tensor({2, 3, 5}, 4);
    Tensor b = random_tensor({5, 4}, 5);
    Tensor c = matmul(a, b);
    ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 5; ++k) acc += a.at({n, i, k}) * b.at({k, j});
                EXPECT_NEAR(c.at({n, i, j}), acc, 1e-14);
            }
    EXPECT_THROW(matmul(a, random_tensor({4, 4}, 6)), ShapeError);
}

TEST(Ops, SoftmaxRowsSumToOneAndAreStable) {
    Tensor x = Tensor::from({2, 3}, {1000, 1001, 1002, -5, 0, 5});
    Tensor s = softmax(x, -1);
    for (std::size_t r = 0; r < 2; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 3; ++c) total += s.at({r, c});
        EXPECT_NEAR(total, 1.0, 1e-15);
    }
    const double denom = 1.0 + std::exp(1.0) + std::exp(2.0);
    EXPECT_NEAR(s.at({0, 2}), std::exp(2.0) / denom, 1e-15);
    Tensor ls = log_softmax(x, 1);
    EXPECT_NEAR(ls.at({1, 0}), -10.0 - std::log(1.0 + std::exp(-5.0) + std::exp(-10.0)), 1e-12);
}

TEST(Ops, LayerNormNormalizesLastAxis) {
    Tensor x = Tensor::from({1, 4}, {1, 2, 3, 4});
    Tensor y = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 0.0);
    const double sd = std::sqrt(1.25);
    EXPECT_NEAR(y.at({0, 0}), -1.5 / sd, 1e-12);
    EXPECT_NEAR(y.at({0, 3}), 1.5 / sd, 1e-12);
}

TEST(Ops, GeluTanhApproximation) {
    Tensor y = gelu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
    const auto ref = [](double x) {
        return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
    };
    EXPECT_NEAR(y.at({0}), ref(-1.0), 1e-15);
    EXPECT_DOUBLE_EQ(y.at({1}), 0.0);
    EXPECT_NEAR(y.at({2}), ref(2.0), 1e-15);
}

TEST(Ops, Conv2dMatchesDirectSum) {
    Tensor x = random_tensor({2, 5, 4}, 7);
    Tensor w = random_tensor({3, 2, 3, 3}, 8);
    Tensor b = random_tensor({3}, 9);
    Tensor y = conv2d(x, w, b, 1);
    ASSERT_EQ(y.shape(), (Shape{3, 5, 4}));
    for (std::size_t o = 0; o < 3; ++o)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 4; ++j) {
                double acc = b.at({o});
                for (std::size_t c = 0; c < 2; ++c)
                    for (int di = 0; di < 3; ++di)
                        for (int dj = 0; dj < 3; ++dj) {
                            const int si = i + di - 1, sj = j + dj - 1;
                            if (si < 0 || sj < 0 || si >= 5 || sj >= 4) continue;
                            acc += x.at({c, std::size_t(si), std::size_t(sj)}) *
                                   w.at({o, c, std::size_t(di), std::size_t(dj)});
                        }
                EXPECT_NEAR(y.at({o, std::size_t(i), std::size_t(j)}), acc, 1e-13);
            }
}

TEST(Ops, GroupNormWholeMapStatistics) {
    Tensor x = random_tensor({2, 3, 3}, 10);
    Tensor y = group_norm(x, Tensor::from({2}, {2.0, 1.0}), Tensor::from({2}, {0.0, 0.5}), 0.0);
    double mean = 0.0, var = 0.0;
    for (double v : x.data()) mean += v;
    mean /= 18.0;
    for (double v : x.data()) var += (v - mean) * (v - mean);
    var /= 18.0;
    EXPECT_NEAR(y.at({0, 1, 2}), 2.0 * (x.at({0, 1, 2}) - mean) / std::sqrt(var), 1e-12);
    EXPECT_NEAR(y.at({1, 0, 0}), (x.at({1, 0, 0}) - mean) / std::sqrt(var) + 0.5, 1e-12);
}

TEST(Ops, BilinearConstantInputStaysConstant) {
    Tensor y = upsample_bilinear2x(Tensor::full({2, 3, 5}, 0.7));
    ASSERT_EQ(y.shape(), (Shape{2, 6, 10}));
    for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Ops, BilinearSinglePixelReplicates) {
    Tensor y = upsample_bilinear2x(Tensor::from({1, 1, 1}, {3.25}));
    EXPECT_EQ(values(y), (std::vector<double>(4, 3.25)));
}

TEST(Ops, BilinearHalfPixelCentres) {
    // align_corners=false: output o samples source (o + 0.5) / 2 - 0.5, clamped at the border.
    Tensor y = upsample_bilinear2x(Tensor::from({1, 2, 2}, {1, 2, 3, 4}));
    const std::vector<double> expected{
        1.0, 1.25, 1.75, 2.0,   //
        1.5, 1.75, 2.25, 2.5,   //
        2.5, 2.75, 3.25, 3.5,   //
        3.0, 3.25, 3.75, 4.0,   //
    };
    const auto got = values(y);
    ASSERT_EQ(got.size(), expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_DOUBLE_EQ(got[i], expected[i]) << i;
}

TEST(Ops, ShapeOps) {
    Tensor x = random_tensor({2, 3, 4}, 11);
    Tensor p = permute(x, {2, 0, 1});
    EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
    EXPECT_DOUBLE_EQ(p.at({3, 1, 2}), x.at({1, 2, 3}));
    EXPECT_EQ(values(permute(p, {1, 2, 0})), values(x));
    Tensor s = slice(x, 1, 1, 2);
    EXPECT_DOUBLE_EQ(s.at({1, 0, 3}), x.at({1, 1, 3}));
    Tensor c = concat({x, s}, 1);
    EXPECT_EQ(c.shape(), (Shape{2, 5, 4}));
    EXPECT_DOUBLE_EQ(c.at({1, 4, 2}), x.at({1, 2, 2}));
    EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
    EXPECT_THROW(slice(x, 1, 2, 2), ShapeError);
    Tensor e = expand(Tensor::from({1, 2}, {1, 2}), {3, 2});
    EXPECT_EQ(values(e), (std::vector<double>{1, 2, 1, 2, 1, 2}));
    Tensor r = sum(x, 1);
    EXPECT_NEAR(r.at({0, 0}), x.at({0, 0, 0}) + x.at({0, 1, 0}) + x.at({0, 2, 0}), 1e-15);
}
