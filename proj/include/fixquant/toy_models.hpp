// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "fixquant/graph.hpp"
#include "fixquant/model_io.hpp"

namespace fixquant::toy {

using Rng = std::mt19937_64;

Tensor random_normal(const Shape& shape, Rng& rng, double stddev = 1.0, double mean = 0.0);
Tensor random_uniform(const Shape& shape, Rng& rng, double lo, double hi);

/// input -> linear -> relu -> ... -> linear -> output. Layer sizes include
/// the input width. Hidden activations are relu, or relu6 if requested.
GraphModel mlp(const std::vector<std::int64_t>& sizes, std::uint64_t seed, bool relu6 = false);

/// input[3,8,8] -> conv1 -> bn1 -> relu1 -> conv2 -> output with random BN
/// statistics.
GraphModel conv_bn_relu_conv(std::uint64_t seed);

/// A small depthwise-separable network with strongly unequal per-channel
/// weight ranges: conv -> bn -> relu6 -> depthwise conv -> bn -> relu6 ->
/// pointwise conv -> avgpool -> linear.
GraphModel depthwise_net(std::uint64_t seed);

/// Two interleaved spiral arms in 2-D, labels 0 and 1.
Dataset spiral(std::int64_t samples, std::uint64_t seed, double noise = 0.05);

/// Inputs drawn from N(0, 1) with per-sample shape `shape`; targets are the
/// teacher model's outputs (regression).
Dataset teacher_regression(const GraphModel& teacher, const Shape& shape, std::int64_t samples, std::uint64_t seed);

}  // namespace fixquant::toy
