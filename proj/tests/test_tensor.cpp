// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixquant/error.hpp"
#include "fixquant/kernels.hpp"
#include "fixquant/quantizer.hpp"
#include "fixquant/toy_models.hpp"

using namespace fixquant;
namespace k = fixquant::kernels;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DataError);
    EXPECT_THROW(Tensor(Shape{0, 2}), DataError);
    Tensor t({2, 3});
    EXPECT_EQ(t.size(), 6);
    t.at({1, 2}) = 5.0;
    EXPECT_EQ(t[5], 5.0);
}

TEST(Tensor, ReshapeKeepsData) {
    Tensor t({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(t.reshaped({4}).values()[3], 4.0);
    EXPECT_THROW(t.reshaped({3}), DataError);
}

TEST(Matmul, IdentityLeavesMatrix) {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(k::matmul(eye, a), a);
}

TEST(Matmul, MatrixVector) {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor x({2}, {1, 1});
    EXPECT_EQ(k::matmul(a, x), Tensor({2}, {3, 7}));
}

TEST(Matmul, ZeroAnnihilates) {
    Tensor z({2, 3});
    Tensor b({3, 2}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(k::matmul(z, b), Tensor({2, 2}));
}

TEST(Matmul, ShapeMismatch) {
    EXPECT_THROW(k::matmul(Tensor({2, 3}), Tensor({2})), DataError);
}

TEST(Matmul, NonFiniteIsAnError) {
    Tensor a({1, 1}, {std::numeric_limits<double>::max()});
    Tensor b({1}, {10.0});
    EXPECT_THROW(k::matmul(a, b), NumericError);
}

TEST(Conv2d, ScalarMultiplyAdd) {
    Tensor x({1, 1, 1, 1}, {2});
    Tensor w({1, 1, 1, 1}, {3});
    Tensor b({1}, {1});
    EXPECT_EQ(k::conv2d(x, w, b, {}), Tensor({1, 1, 1, 1}, {7}));
}

TEST(Conv2d, DeltaKernelIsIdentity) {
    toy::Rng rng(1);
    Tensor x = toy::random_normal({2, 3, 5, 5}, rng);
    Tensor w({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.at({c, c, 0, 0}) = 1.0;
    EXPECT_EQ(k::conv2d(x, w, Tensor({3}), {}), x);
}

TEST(Conv2d, ZeroInputGivesBias) {
    Tensor x({1, 2, 4, 4});
    toy::Rng rng(2);
    Tensor w = toy::random_normal({3, 2, 3, 3}, rng);
    Tensor b({3}, {0.5, -1.0, 2.0});
    Tensor y = k::conv2d(x, w, b, {{1, 1}, {1, 1}, 1});
    ASSERT_EQ(y.shape(), (Shape{1, 3, 4, 4}));
    for (std::int64_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], b[i / 16]);
}

TEST(Conv2d, OutputShapeFormula) {
    EXPECT_EQ(k::conv2d_output_shape({1, 3, 7, 9}, {4, 3, 3, 2}, {{2, 2}, {1, 0}, 1}), (Shape{1, 4, 4, 4}));
}

TEST(Conv2d, GroupedMatchesPerGroupConvolution) {
    toy::Rng rng(3);
    Tensor x = toy::random_normal({1, 4, 5, 5}, rng);
    Tensor w = toy::random_normal({4, 2, 3, 3}, rng);
    Tensor y = k::conv2d(x, w, {}, {{1, 1}, {1, 1}, 2});
    // Group g reads input channels [2g, 2g+2) only.
    for (int g = 0; g < 2; ++g) {
        Tensor xg({1, 2, 5, 5});
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 25; ++i) xg[c * 25 + i] = x[(2 * g + c) * 25 + i];
        Tensor wg({2, 2, 3, 3});
        for (int i = 0; i < 36; ++i) wg[i] = w[g * 36 + i];
        Tensor yg = k::conv2d(xg, wg, {}, {{1, 1}, {1, 1}, 1});
        for (int i = 0; i < 50; ++i) EXPECT_DOUBLE_EQ(yg[i], y[g * 50 + i]);
    }
}

TEST(Conv2d, IncompatibleChannels) {
    EXPECT_THROW(k::conv2d(Tensor({1, 3, 4, 4}), Tensor({2, 2, 1, 1}), {}, {}), DataError);
}

TEST(Elementwise, Relu) {
    EXPECT_EQ(k::relu(Tensor({3}, {-1, 0, 2})), Tensor({3}, {0, 0, 2}));
}

TEST(Elementwise, Relu6Clamps) { EXPECT_EQ(k::relu6(Tensor({1}, {7})), Tensor({1}, {6})); }

TEST(Elementwise, BatchnormWithIdentityStatistics) {
    toy::Rng rng(4);
    Tensor x = toy::random_normal({2, 3, 2, 2}, rng);
    Tensor y = k::batch_norm(x, Tensor::filled({3}, 1), Tensor({3}), Tensor({3}), Tensor::filled({3}, 1), 0.0);
    EXPECT_EQ(y, x);
}

TEST(Elementwise, AddRequiresEqualShapes) {
    EXPECT_THROW(k::add(Tensor({2}), Tensor({3})), DataError);
    EXPECT_EQ(k::add(Tensor({2}, {1, 2}), Tensor({2}, {3, 4})), Tensor({2}, {4, 6}));
}

TEST(Elementwise, ConcatAlongChannels) {
    Tensor a({1, 1, 2}, {1, 2});
    Tensor b({1, 2, 2}, {3, 4, 5, 6});
    const Tensor parts[] = {a, b};
    EXPECT_EQ(k::concat(parts, 1), Tensor({1, 3, 2}, {1, 2, 3, 4, 5, 6}));
    const Tensor bad[] = {a, Tensor({1, 1, 3})};
    EXPECT_THROW(k::concat(bad, 1), DataError);
}

TEST(Elementwise, Pools) {
    Tensor x({1, 1, 2, 2}, {1, 5, -3, 2});
    EXPECT_EQ(k::max_pool2d(x, {}), Tensor({1, 1, 1, 1}, {5}));
    EXPECT_EQ(k::avg_pool2d(x, {}), Tensor({1, 1, 1, 1}, {1.25}));
}

TEST(Elementwise, DispatchAndUnknownKind) {
    const Tensor in[] = {Tensor({2}, {-1, 3})};
    EXPECT_EQ(k::elementwise(k::ElementwiseKind::relu, in), Tensor({2}, {0, 3}));
    EXPECT_THROW(k::parse_elementwise_kind("gelu"), DataError);
}

TEST(Properties, ReluScaleEquivariance) {
    toy::Rng rng(5);
    std::uniform_real_distribution<double> pos(0.01, 100.0);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = toy::random_normal({16}, rng);
        const double s = pos(rng);
        Tensor sx = x;
        for (auto& v : sx.values()) v *= s;
        Tensor lhs = k::relu(sx);
        Tensor rhs = k::relu(x);
        for (auto& v : rhs.values()) v *= s;
        EXPECT_EQ(lhs, rhs);
    }
}

TEST(Properties, AvgPoolCommutesWithDequantizeUpToOneStep) {
    toy::Rng rng(6);
    QuantEncoding e{0.05, 128, 8, false, false};
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = qdq(toy::random_normal({1, 2, 4, 4}, rng), e);
        // Pooling on-grid values leaves the grid; requantizing moves it by at most s/2.
        Tensor pooled = k::avg_pool2d(x, {});
        Tensor requant = qdq(pooled, e);
        for (std::int64_t i = 0; i < pooled.size(); ++i) EXPECT_LE(std::abs(requant[i] - pooled[i]), e.scale / 2 + 1e-12);
    }
}

TEST(Properties, KernelsAreDeterministic) {
    toy::Rng rng(7);
    Tensor x = toy::random_normal({3, 4, 6, 6}, rng);
    Tensor w = toy::random_normal({5, 4, 3, 3}, rng);
    EXPECT_EQ(k::conv2d(x, w, {}, {{1, 1}, {1, 1}, 1}), k::conv2d(x, w, {}, {{1, 1}, {1, 1}, 1}));
}
