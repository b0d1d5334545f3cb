// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fixquant/error.hpp"
#include "fixquant/kernels.hpp"
#include "fixquant/model_io.hpp"
#include "fixquant/quantsim.hpp"
#include "fixquant/toy_models.hpp"

using namespace fixquant;
using nlohmann::json;

namespace {

std::vector<Tensor> feed_for(const Shape& sample, std::int64_t batches, std::int64_t batch_size, std::uint64_t seed) {
    toy::Rng rng(seed);
    std::vector<Tensor> out;
    Shape s{batch_size};
    s.insert(s.end(), sample.begin(), sample.end());
    for (std::int64_t b = 0; b < batches; ++b) out.push_back(toy::random_normal(s, rng).rounded_to_float());
    return out;
}

std::size_t enabled_count(const std::map<std::string, TensorQuantizer>& qs) {
    std::size_t n = 0;
    for (const auto& [name, q] : qs) n += q.enabled ? 1 : 0;
    return n;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fixquant_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

GraphModel pool_model() {
    GraphModel g;
    Node in;
    in.name = "input";
    in.kind = NodeKind::input;
    in.attrs.shape = {2, 4, 4};
    g.add_node(in);
    toy::Rng rng(3);
    Node c;
    c.name = "conv";
    c.kind = NodeKind::conv2d;
    c.inputs = {"input"};
    c.attrs.padding = {1, 1};
    c.params["weight"] = toy::random_normal({2, 2, 3, 3}, rng, 0.5);
    g.add_node(c);
    Node mp;
    mp.name = "mp";
    mp.kind = NodeKind::maxpool;
    mp.inputs = {"conv"};
    mp.attrs.stride = {2, 2};
    g.add_node(mp);
    Node ap = mp;
    ap.name = "ap";
    ap.kind = NodeKind::avgpool;
    ap.inputs = {"mp"};
    ap.attrs.kernel = {2, 2};
    g.add_node(ap);
    Node out;
    out.name = "output";
    out.kind = NodeKind::output;
    out.inputs = {"ap"};
    g.add_node(out);
    return g;
}

}  // namespace

TEST(CreateQuantsim, DefaultsOnLinearModel) {
    const auto sim = create_quantsim(toy::mlp({4, 3}, 1), 8, 8);
    EXPECT_EQ(enabled_count(sim.param_quantizers()), 1u);
    EXPECT_TRUE(sim.quantizer("fc1.weight").enabled);
    EXPECT_TRUE(sim.quantizer("fc1.weight").symmetric);
    EXPECT_FALSE(sim.quantizer("fc1.bias").enabled);
    EXPECT_EQ(enabled_count(sim.activation_quantizers()), 2u);
    EXPECT_FALSE(sim.quantizer("fc1").symmetric);
    EXPECT_EQ(sim.quantizer("fc1").bitwidth, 8);
}

TEST(CreateQuantsim, MaxPoolGetsNoQuantizerAvgPoolReusesInput) {
    const auto sim = create_quantsim(pool_model());
    EXPECT_FALSE(sim.has_quantizer("mp"));
    EXPECT_FALSE(sim.has_quantizer("ap"));
    EXPECT_EQ(sim.output_quantizer_for("mp"), std::nullopt);
    EXPECT_EQ(sim.output_quantizer_for("ap"), std::optional<std::string>("conv"));
}

TEST(CreateQuantsim, AddAndConcatOwnQuantizers) {
    GraphModel g;
    Node in;
    in.name = "input";
    in.kind = NodeKind::input;
    in.attrs.shape = {2};
    g.add_node(in);
    Node r;
    r.name = "r";
    r.kind = NodeKind::relu;
    r.inputs = {"input"};
    g.add_node(r);
    Node a;
    a.name = "sum";
    a.kind = NodeKind::add;
    a.inputs = {"input", "r"};
    g.add_node(a);
    Node c;
    c.name = "cat";
    c.kind = NodeKind::concat;
    c.inputs = {"sum", "r"};
    g.add_node(c);
    Node o;
    o.name = "output";
    o.kind = NodeKind::output;
    o.inputs = {"cat"};
    g.add_node(o);
    const auto sim = create_quantsim(g);
    EXPECT_TRUE(sim.quantizer("sum").enabled);
    EXPECT_TRUE(sim.quantizer("cat").enabled);
}

TEST(SimConfigTest, OpTypeOverridesDefaults) {
    const auto cfg = SimConfig::from_json(json::parse(R"({
        "defaults": {"ops": {"is_output_quantized": "True"}, "params": {"is_symmetric": "False"}},
        "op_type": {"relu": {"is_output_quantized": "False"},
                    "linear": {"per_channel_quantization": true, "params": {"weight": {"is_symmetric": true}}}}
    })"));
    const auto sim = create_quantsim(toy::mlp({3, 4, 2}, 1), 8, 8, RangeKind::min_max, cfg);
    EXPECT_FALSE(sim.quantizer("relu1").enabled);
    EXPECT_TRUE(sim.quantizer("fc1").enabled);
    EXPECT_TRUE(sim.quantizer("fc1.weight").symmetric);
    EXPECT_EQ(sim.quantizer("fc1.weight").channel_axis, std::optional<int>(0));
    EXPECT_FALSE(sim.quantizer("fc1.bias").channel_axis.has_value());
}

TEST(SimConfigTest, ParamsSectionAndSupergroups) {
    const auto cfg = SimConfig::from_json(json::parse(R"({
        "params": {"bias": {"is_quantized": true}},
        "supergroups": [{"op_list": ["linear", "relu"]}],
        "model_input": {"is_input_quantized": false},
        "model_output": {"is_output_quantized": false}
    })"));
    const auto sim = create_quantsim(toy::mlp({3, 4, 2}, 1), 8, 8, RangeKind::min_max, cfg);
    EXPECT_TRUE(sim.quantizer("fc1.bias").enabled);
    EXPECT_FALSE(sim.quantizer("fc1").enabled);
    EXPECT_TRUE(sim.quantizer("relu1").enabled);
    EXPECT_FALSE(sim.quantizer("input").enabled);
    EXPECT_FALSE(sim.quantizer("fc2").enabled);
}

TEST(SimConfigTest, UnknownKeysRejectedAndJsonRoundTrip) {
    EXPECT_THROW(SimConfig::from_json(json::parse(R"({"defaults": {"opz": {}}})")), DataError);
    EXPECT_THROW(SimConfig::from_json(json::parse(R"({"op_type": {"gru": {}}})")), DataError);
    SimConfig c;
    c.op_type[NodeKind::conv2d].per_channel_quantization = true;
    c.supergroups.push_back({NodeKind::conv2d, NodeKind::relu});
    c.model_output_quantized = false;
    EXPECT_EQ(SimConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(ComputeEncodings, ConstantWeightLayerMatchesDirectStatistic) {
    auto g = toy::mlp({3, 2}, 1);
    g.set_param("fc1", "weight", Tensor::filled({2, 3}, 0.75));
    for (auto scheme : {RangeKind::min_max, RangeKind::sqnr}) {
        auto sim = create_quantsim(g, 8, 8, scheme);
        sim.compute_encodings(feed_for({3}, 1, 4, 2));
        RangeAccumulator acc;
        acc.observe(g.node("fc1").param("weight"));
        const auto expected = scheme == RangeKind::min_max ? compute_minmax(acc.channels()[0], 8, true)
                                                           : compute_sqnr(acc.channels()[0], 8, true);
        EXPECT_EQ(sim.quantizer("fc1.weight").encodings.front(), expected);
    }
}

TEST(ComputeEncodings, DuplicatedBatchesMatchSingleBatch) {
    const auto g = toy::conv_bn_relu_conv(3);
    const auto feed = feed_for({3, 8, 8}, 1, 8, 4);
    const std::vector<Tensor> doubled{feed[0], feed[0]};
    for (auto scheme : {RangeKind::min_max, RangeKind::sqnr}) {
        auto a = create_quantsim(g, 8, 8, scheme);
        auto b = create_quantsim(g, 8, 8, scheme);
        a.compute_encodings(feed);
        b.compute_encodings(doubled);
        EXPECT_EQ(a.encodings_json(), b.encodings_json());
    }
}

TEST(ComputeEncodings, ThousandSamplesOnToyCnn) {
    auto sim = create_quantsim(toy::depthwise_net(5));
    sim.compute_encodings(feed_for({3, 8, 8}, 12, 100, 5));
    EXPECT_NO_THROW(sim.require_encodings());
    for (const auto& [name, q] : sim.activation_quantizers()) {
        if (!q.enabled) continue;
        ASSERT_TRUE(q.stats.has_value());
        // Capped at 1000 samples: stats hold 1000 * per-sample size values.
        EXPECT_EQ(q.stats->channels()[0].count % 1000, 0) << name;
    }
    EXPECT_EQ(sim.quantizer("input").stats->channels()[0].count, 1000 * 3 * 8 * 8);
}

TEST(ComputeEncodings, EmptyFeedIsAnError) {
    auto sim = create_quantsim(toy::mlp({2, 2}, 1));
    EXPECT_THROW(sim.compute_encodings({}), DataError);
}

TEST(SimulateForward, RequiresEncodings) {
    const auto sim = create_quantsim(toy::mlp({2, 2}, 1));
    EXPECT_THROW(sim.forward(Tensor({1, 2})), UsageError);
}

TEST(SimulateForward, AllDisabledIsBitExactFp32) {
    const auto g = toy::depthwise_net(6);
    auto sim = create_quantsim(g);
    const auto feed = feed_for({3, 8, 8}, 2, 8, 6);
    sim.compute_encodings(feed);
    sim.set_all_enabled(false);
    EXPECT_EQ(sim.forward(feed[1]), forward(g, feed[1]));
}

TEST(SimulateForward, ThirtyTwoBitIsNearlyFp32) {
    const auto g = toy::depthwise_net(7);
    auto sim = create_quantsim(g, 32, 32);
    const auto feed = feed_for({3, 8, 8}, 2, 8, 7);
    sim.compute_encodings(feed);
    EXPECT_LE(max_abs_diff(sim.forward(feed[1]), forward(g, feed[1])), 1e-5);
}

TEST(SimulateForward, W8A8LinearEqualsManualComposition) {
    const auto g = toy::mlp({4, 3}, 8);
    auto sim = create_quantsim(g);
    const auto feed = feed_for({4}, 1, 16, 8);
    sim.compute_encodings(feed);
    const auto& ein = sim.quantizer("input").encodings.front();
    const auto& ew = sim.quantizer("fc1.weight").encodings.front();
    const auto& eout = sim.quantizer("fc1").encodings.front();
    // Independent composition: qdq each operand by hand, then the layer.
    const Tensor& w = g.node("fc1").param("weight");
    const Tensor& b = g.node("fc1").param("bias");
    const Tensor& x = feed[0];
    Tensor expected({16, 3});
    for (int n = 0; n < 16; ++n) {
        for (int o = 0; o < 3; ++o) {
            double acc = b[o];
            for (int i = 0; i < 4; ++i) acc += qdq_value(x[n * 4 + i], ein) * qdq_value(w[o * 4 + i], ew);
            expected[n * 3 + o] = qdq_value(acc, eout);
        }
    }
    EXPECT_EQ(sim.forward(x), expected);
}

TEST(SimulateForward, DisabledActivationsEqualWeightsOnly) {
    const auto g = toy::mlp({4, 6, 3}, 9);
    SimConfig cfg;
    cfg.ops_output_quantized = false;
    cfg.model_input_quantized = false;
    auto sim = create_quantsim(g, 8, 8, RangeKind::min_max, cfg);
    const auto feed = feed_for({4}, 1, 16, 9);
    sim.compute_encodings(feed);
    ForwardHooks manual;
    manual.param = [&](const Node& node, const std::string& role, const Tensor& t) {
        if (role != "weight") return t;
        return qdq(t, sim.quantizer(node.name + ".weight").encodings.front());
    };
    EXPECT_EQ(sim.forward(feed[0]), forward(g, feed[0], &manual));
}

TEST(SimulateForward, AvgPoolRequantizesWithInputEncoding) {
    auto sim = create_quantsim(pool_model());
    const auto feed = feed_for({2, 4, 4}, 1, 4, 10);
    sim.compute_encodings(feed);
    const auto& e = sim.quantizer("conv").encodings.front();
    const Tensor y = sim.forward(feed[0]);
    for (auto v : y.values()) EXPECT_EQ(qdq_value(v, e), v);
}

TEST(Export, RoundTripIsBitIdentical) {
    const auto dir = temp_dir("export");
    SimConfig cfg;
    cfg.per_channel = true;
    cfg.op_type[NodeKind::relu].is_output_quantized = false;
    auto sim = create_quantsim(toy::conv_bn_relu_conv(11), 8, 8, RangeKind::sqnr, cfg);
    const auto feed = feed_for({3, 8, 8}, 2, 4, 11);
    sim.compute_encodings(feed);
    sim.export_model(dir / "net");

    const auto enc = read_json(dir / "net.encodings.json");
    EXPECT_EQ(enc["param_encodings"]["conv1.weight"].size(), 8u);
    EXPECT_FALSE(enc["activation_encodings"].contains("relu1"));
    EXPECT_FALSE(enc["param_encodings"].contains("conv1.bias"));
    const auto rec = enc["param_encodings"]["conv1.weight"][0];
    for (const char* key : {"bitwidth", "scale", "offset", "is_symmetric", "is_signed", "min", "max"})
        EXPECT_TRUE(rec.contains(key)) << key;

    auto back = create_quantsim(load_model(dir / "net.json"), 8, 8, RangeKind::sqnr, cfg);
    back.import_encodings(enc, false);
    EXPECT_EQ(back.encodings_json(), sim.encodings_json());
    EXPECT_EQ(back.forward(feed[1]), sim.forward(feed[1]));
}

TEST(Import, FrozenEncodingsSurviveCalibration) {
    const auto g = toy::mlp({4, 5, 2}, 12);
    auto sim = create_quantsim(g);
    sim.compute_encodings(feed_for({4}, 1, 8, 12));
    const auto before = sim.encodings_json();
    auto other = create_quantsim(g);
    other.import_encodings(before, true);
    other.compute_encodings(feed_for({4}, 3, 8, 99));
    EXPECT_EQ(other.encodings_json(), sim.encodings_json(true));
    for (const auto& name : other.quantizer_names()) {
        if (other.quantizer(name).enabled) EXPECT_TRUE(other.quantizer(name).frozen) << name;
    }
}

TEST(Import, UnknownNameIsNamed) {
    auto sim = create_quantsim(toy::mlp({2, 2}, 1));
    sim.compute_encodings(feed_for({2}, 1, 2, 1));
    auto j = sim.encodings_json();
    j["param_encodings"]["fc_1.weight"] = j["param_encodings"]["fc1.weight"];
    try {
        sim.import_encodings(j, false);
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("fc_1.weight"), std::string::npos);
    }
}

TEST(Import, BitwidthMismatch) {
    auto sim8 = create_quantsim(toy::mlp({2, 2}, 1));
    sim8.compute_encodings(feed_for({2}, 1, 2, 1));
    auto sim4 = create_quantsim(toy::mlp({2, 2}, 1), 4, 8);
    EXPECT_THROW(sim4.import_encodings(sim8.encodings_json(), false), DataError);
}

TEST(Bitwidth, ChangingBitwidthRederivesFromStats) {
    auto sim = create_quantsim(toy::mlp({3, 4, 2}, 13));
    sim.compute_encodings(feed_for({3}, 2, 8, 13));
    const auto e8 = sim.quantizer("fc1").encodings.front();
    sim.set_bitwidth("fc1", 4);
    const auto e4 = sim.quantizer("fc1").encodings.front();
    EXPECT_EQ(e4.bitwidth, 4);
    EXPECT_NEAR(e4.grid_max() - e4.grid_min(), e8.grid_max() - e8.grid_min(), 0.1 * (e8.grid_max() - e8.grid_min()));
    sim.set_bitwidth("fc1", 8);
    EXPECT_EQ(sim.quantizer("fc1").encodings.front(), e8);
}
