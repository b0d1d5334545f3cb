// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/toy_models.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fixquant/error.hpp"

namespace fixquant::toy {

Tensor random_normal(const Shape& shape, Rng& rng, double stddev, double mean) {
    std::normal_distribution<double> dist(mean, stddev);
    Tensor t(shape);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

Tensor random_uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (auto& v : t.values()) v = dist(rng);
    return t;
}

namespace {

Node input_node(const Shape& shape) {
    Node n;
    n.name = "input";
    n.kind = NodeKind::input;
    n.attrs.shape = shape;
    return n;
}

Node unary(const std::string& name, NodeKind kind, const std::string& input) {
    Node n;
    n.name = name;
    n.kind = kind;
    n.inputs = {input};
    return n;
}

Node conv(const std::string& name, const std::string& input, Tensor w, Tensor b, int padding, int groups = 1) {
    Node n = unary(name, NodeKind::conv2d, input);
    n.attrs.padding = {padding, padding};
    n.attrs.groups = groups;
    n.params["weight"] = std::move(w);
    n.params["bias"] = std::move(b);
    return n;
}

Node batchnorm(const std::string& name, const std::string& input, std::int64_t channels, Rng& rng) {
    Node n = unary(name, NodeKind::batchnorm, input);
    n.params["gamma"] = random_uniform({channels}, rng, 0.5, 1.5);
    n.params["beta"] = random_normal({channels}, rng, 0.5);
    n.params["running_mean"] = random_normal({channels}, rng, 0.3);
    n.params["running_var"] = random_uniform({channels}, rng, 0.5, 2.0);
    return n;
}

}  // namespace

GraphModel mlp(const std::vector<std::int64_t>& sizes, std::uint64_t seed, bool relu6) {
    if (sizes.size() < 2) throw UsageError("an MLP needs at least an input and an output width");
    Rng rng(seed);
    GraphModel g;
    g.add_node(input_node({sizes[0]}));
    std::string prev = "input";
    for (std::size_t i = 1; i < sizes.size(); ++i) {
        const auto name = "fc" + std::to_string(i);
        Node fc = unary(name, NodeKind::linear, prev);
        const double fan_in = static_cast<double>(sizes[i - 1]);
        fc.params["weight"] = random_normal({sizes[i], sizes[i - 1]}, rng, std::sqrt(2.0 / fan_in));
        fc.params["bias"] = random_normal({sizes[i]}, rng, 0.1);
        g.add_node(std::move(fc));
        prev = name;
        if (i + 1 < sizes.size()) {
            const auto act = "relu" + std::to_string(i);
            g.add_node(unary(act, relu6 ? NodeKind::relu6 : NodeKind::relu, prev));
            prev = act;
        }
    }
    g.add_node(unary("output", NodeKind::output, prev));
    return g;
}

GraphModel conv_bn_relu_conv(std::uint64_t seed) {
    Rng rng(seed);
    GraphModel g;
    g.add_node(input_node({3, 8, 8}));
    g.add_node(conv("conv1", "input", random_normal({8, 3, 3, 3}, rng, 0.3), random_normal({8}, rng, 0.1), 1));
    g.add_node(batchnorm("bn1", "conv1", 8, rng));
    g.add_node(unary("relu1", NodeKind::relu, "bn1"));
    g.add_node(conv("conv2", "relu1", random_normal({4, 8, 3, 3}, rng, 0.2), random_normal({4}, rng, 0.1), 0));
    g.add_node(unary("output", NodeKind::output, "conv2"));
    return g;
}

GraphModel depthwise_net(std::uint64_t seed) {
    Rng rng(seed);
    GraphModel g;
    g.add_node(input_node({3, 8, 8}));
    // Per-output-channel magnitudes spread over two orders of magnitude.
    auto spread = [&](Shape shape) {
        Tensor w = random_normal(shape, rng, 1.0);
        const auto per = w.size() / shape[0];
        for (std::int64_t o = 0; o < shape[0]; ++o) {
            const double scale = std::pow(10.0, -1.5 + 2.0 * static_cast<double>(o) / static_cast<double>(shape[0] - 1));
            for (std::int64_t i = 0; i < per; ++i) w[o * per + i] *= scale;
        }
        return w;
    };
    g.add_node(conv("conv1", "input", spread({8, 3, 3, 3}), random_normal({8}, rng, 0.05), 1));
    g.add_node(batchnorm("bn1", "conv1", 8, rng));
    g.add_node(unary("relu1", NodeKind::relu6, "bn1"));
    g.add_node(conv("dw2", "relu1", spread({8, 1, 3, 3}), random_normal({8}, rng, 0.05), 1, 8));
    g.add_node(batchnorm("bn2", "dw2", 8, rng));
    g.add_node(unary("relu2", NodeKind::relu6, "bn2"));
    g.add_node(conv("pw3", "relu2", random_normal({8, 8, 1, 1}, rng, 0.4), random_normal({8}, rng, 0.05), 0));
    Node pool = unary("pool", NodeKind::avgpool, "pw3");
    pool.attrs.kernel = {4, 4};
    pool.attrs.stride = {4, 4};
    g.add_node(std::move(pool));
    Node fc = unary("fc", NodeKind::linear, "pool");
    fc.params["weight"] = random_normal({4, 32}, rng, 0.25);
    fc.params["bias"] = random_normal({4}, rng, 0.05);
    g.add_node(std::move(fc));
    g.add_node(unary("output", NodeKind::output, "fc"));
    return g;
}

Dataset spiral(std::int64_t samples, std::uint64_t seed, double noise) {
    if (samples < 2) throw UsageError("spiral needs at least two samples");
    Rng rng(seed);
    std::normal_distribution<double> jitter(0.0, noise);
    std::uniform_real_distribution<double> radius(0.05, 1.0);
    Dataset d;
    d.task = Task::classification;
    d.num_classes = 2;
    d.inputs = Tensor({samples, 2});
    d.targets = Tensor({samples});
    for (std::int64_t i = 0; i < samples; ++i) {
        const auto label = i % 2;
        const double r = radius(rng);
        const double theta = 3.0 * std::numbers::pi * r + std::numbers::pi * static_cast<double>(label);
        d.inputs[2 * i] = r * std::cos(theta) + jitter(rng);
        d.inputs[2 * i + 1] = r * std::sin(theta) + jitter(rng);
        d.targets[i] = static_cast<double>(label);
    }
    d.inputs = d.inputs.rounded_to_float();
    return d;
}

Dataset teacher_regression(const GraphModel& teacher, const Shape& shape, std::int64_t samples, std::uint64_t seed) {
    Rng rng(seed);
    Shape full{samples};
    full.insert(full.end(), shape.begin(), shape.end());
    Dataset d;
    d.task = Task::regression;
    d.inputs = random_normal(full, rng).rounded_to_float();
    d.targets = forward(teacher, d.inputs).rounded_to_float();
    return d;
}

}  // namespace fixquant::toy
