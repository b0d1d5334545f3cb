// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "fixquant/amp.hpp"
#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"
#include "fixquant/toy_models.hpp"

using namespace fixquant;
namespace fs = std::filesystem;

namespace {

Node make(const std::string& name, NodeKind kind, std::vector<std::string> inputs) {
    Node n;
    n.name = name;
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::path(::testing::TempDir()) / ("fixquant_amp_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    const auto b = read_bytes(p);
    return {b.begin(), b.end()};
}

const std::vector<CandidatePair> kCandidates{{16, 16}, {16, 8}, {8, 16}};

// Three layer groups; scores are negative output MSE against the float model.
struct Fixture {
    GraphModel model = toy::mlp({4, 12, 12, 3}, 21);
    Tensor x1, x2, ref1, ref2;
    int calls1 = 0, calls2 = 0;

    Fixture() {
        toy::Rng rng(4);
        x2 = toy::random_normal({64, 4}, rng);
        // Phase 1 sees a reduced slice of the calibration data.
        x1 = slice_rows(x2, 0, 16);
        ref1 = forward(model, x1);
        ref2 = forward(model, x2);
    }

    QuantSimModel sim() const {
        auto s = create_quantsim(model, 8, 8);
        s.compute_encodings(std::vector<Tensor>{x2});
        return s;
    }

    static double fidelity(const QuantSimModel& s, const Tensor& x, const Tensor& ref) {
        const Tensor y = s.forward(x);
        double e = 0.0;
        for (std::int64_t i = 0; i < y.size(); ++i) e += (y[i] - ref[i]) * (y[i] - ref[i]);
        return -e / static_cast<double>(y.size());
    }

    EvalCallback eval1() {
        return [this](const QuantSimModel& s) {
            ++calls1;
            return fidelity(s, x1, ref1);
        };
    }
    EvalCallback eval2() {
        return [this](const QuantSimModel& s) {
            ++calls2;
            return fidelity(s, x2, ref2);
        };
    }
};

}  // namespace

TEST(LayerGroups, LinearReluLinearGivesTwoGroups) {
    const auto sim = create_quantsim(toy::mlp({3, 4, 2}, 1));
    const auto groups = find_layer_groups(sim);
    ASSERT_EQ(groups.size(), 2u);
    EXPECT_EQ(groups[0].nodes, (std::vector<std::string>{"input", "fc1", "relu1"}));
    EXPECT_EQ(groups[0].mac_layers, std::vector<std::string>{"fc1"});
    EXPECT_EQ(groups[1].nodes, std::vector<std::string>{"fc2"});
    EXPECT_EQ(groups[1].param_quantizers, (std::vector<std::string>{"fc2.bias", "fc2.weight"}));
}

TEST(LayerGroups, AddInputsShareAGroup) {
    GraphModel g;
    Node in = make("x", NodeKind::input, {});
    in.attrs.shape = {3};
    g.add_node(in);
    for (const auto* name : {"a", "b"}) {
        Node fc = make(name, NodeKind::linear, {"x"});
        fc.params["weight"] = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        g.add_node(fc);
    }
    g.add_node(make("sum", NodeKind::add, {"a", "b"}));
    g.add_node(make("y", NodeKind::output, {"sum"}));
    const auto groups = find_layer_groups(create_quantsim(g));
    ASSERT_EQ(groups.size(), 1u);
    EXPECT_EQ(groups[0].mac_layers, (std::vector<std::string>{"a", "b"}));
}

TEST(LayerGroups, SingleLayerIsOneGroup) {
    const auto groups = find_layer_groups(create_quantsim(toy::mlp({4, 4}, 1)));
    EXPECT_EQ(groups.size(), 1u);
}

TEST(LayerGroups, PartitionCoversEveryQuantizerOnce) {
    for (const auto& model : {toy::conv_bn_relu_conv(2), toy::depthwise_net(3), toy::mlp({4, 12, 12, 3}, 21)}) {
        const auto sim = create_quantsim(model);
        std::vector<std::string> seen;
        for (const auto& g : find_layer_groups(sim)) {
            seen.insert(seen.end(), g.param_quantizers.begin(), g.param_quantizers.end());
            seen.insert(seen.end(), g.activation_quantizers.begin(), g.activation_quantizers.end());
        }
        std::sort(seen.begin(), seen.end());
        auto all = sim.quantizer_names();
        std::sort(all.begin(), all.end());
        EXPECT_EQ(seen, all);
    }
}

TEST(BitOps, HalvedParamWidthHalvesSingleLayer) {
    const auto sim = create_quantsim(toy::mlp({4, 4}, 1));
    const auto groups = find_layer_groups(sim);
    EXPECT_DOUBLE_EQ(bit_ops(sim, groups, {{16, 16}}), 16.0 * 16 * 16);
    EXPECT_DOUBLE_EQ(relative_bit_ops(sim, groups, {{8, 16}}, {16, 16}), 0.5);
    EXPECT_DOUBLE_EQ(relative_bit_ops(sim, groups, {{16, 16}}, {16, 16}), 1.0);
}

TEST(BitOps, OneOfTwoEqualLayersHalved) {
    const auto sim = create_quantsim(toy::mlp({4, 4, 4}, 1));
    const auto groups = find_layer_groups(sim);
    ASSERT_EQ(groups.size(), 2u);
    EXPECT_DOUBLE_EQ(relative_bit_ops(sim, groups, {{16, 16}, {16, 8}}, {16, 16}), 0.75);
}

TEST(Amp, MaxCandidateIsANoOp) {
    Fixture f;
    auto sim = f.sim();
    const auto groups = find_layer_groups(sim);
    for (const auto& g : groups) apply_candidate(sim, g, {16, 16});
    const auto once = sim.encodings_json().dump();
    for (const auto& g : groups) apply_candidate(sim, g, {8, 8});
    for (const auto& g : groups) apply_candidate(sim, g, {16, 16});
    EXPECT_EQ(sim.encodings_json().dump(), once);
}

TEST(Amp, SensitivityListCardinalityAndCacheReuse) {
    Fixture f;
    f.model = toy::mlp({4, 12, 3}, 5);
    f.ref1 = forward(f.model, f.x1);
    auto sim = f.sim();
    const auto groups = find_layer_groups(sim);
    ASSERT_EQ(groups.size(), 2u);
    const auto dir = fresh_dir("sens");
    fs::create_directories(dir);
    for (const auto& g : groups) apply_candidate(sim, g, {16, 16});
    const auto list = sensitivity_analysis(sim, groups, kCandidates, f.eval1(), dir);
    EXPECT_EQ(list.entries.size(), 4u);
    EXPECT_EQ(f.calls1, 5);
    const auto bytes = slurp(dir / "accuracy_list.json");
    const auto again = sensitivity_analysis(sim, groups, kCandidates, f.eval1(), dir);
    EXPECT_EQ(f.calls1, 5);
    EXPECT_EQ(slurp(dir / "accuracy_list.json"), bytes);
    ASSERT_EQ(again.entries.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(again.entries[i].accuracy, list.entries[i].accuracy);
}

TEST(Amp, FailedEvaluationKeepsCompletedEntries) {
    Fixture f;
    auto sim = f.sim();
    const auto dir = fresh_dir("fail");
    int n = 0;
    EvalCallback flaky = [&](const QuantSimModel& s) {
        if (++n == 4) throw NumericError("boom");
        return Fixture::fidelity(s, f.x1, f.ref1);
    };
    EXPECT_THROW(choose_mixed_precision(sim, kCandidates, flaky, f.eval2(), 1.0, dir, true), NumericError);
    const auto j = read_json(dir / "accuracy_list.json");
    EXPECT_EQ(j["entries"].size(), 2u);
    auto resumed = f.sim();
    const auto r = choose_mixed_precision(resumed, kCandidates, f.eval1(), f.eval2(), 1.0, dir, false);
    EXPECT_EQ(f.calls1, 4);
    EXPECT_EQ(r.accuracy.entries.size(), 6u);
}

TEST(Amp, OneGroupOneMoveGivesOneEntry) {
    Fixture f;
    f.model = toy::mlp({4, 3}, 2);
    f.ref2 = forward(f.model, f.x2);
    f.ref1 = forward(f.model, f.x1);
    auto sim = f.sim();
    const auto r = choose_mixed_precision(sim, {{16, 16}, {16, 8}}, f.eval1(), f.eval2(), 1e9, fresh_dir("one"), true);
    ASSERT_EQ(r.pareto.evaluated.size(), 1u);
    EXPECT_DOUBLE_EQ(r.pareto.evaluated[0].relative_bit_ops, 0.5);
}

TEST(Amp, FullProfileDecreasesAndReplays) {
    Fixture f;
    auto sim = f.sim();
    const auto r = choose_mixed_precision(sim, kCandidates, f.eval1(), f.eval2(), 1.0, fresh_dir("full"), true);
    ASSERT_EQ(r.groups.size(), 3u);
    EXPECT_EQ(r.accuracy.entries.size(), 6u);
    ASSERT_EQ(r.pareto.evaluated.size(), 3u);
    EXPECT_EQ(r.pareto.accepted.size(), 3u);
    double prev = 1.0;
    auto fresh = f.sim();
    std::vector<CandidatePair> assignment(3, {16, 16});
    for (const auto& g : r.groups) apply_candidate(fresh, g, {16, 16});
    for (const auto& e : r.pareto.evaluated) {
        EXPECT_LT(e.relative_bit_ops, prev);
        prev = e.relative_bit_ops;
        assignment[static_cast<std::size_t>(e.group)] = e.candidate;
        apply_candidate(fresh, r.groups[static_cast<std::size_t>(e.group)], e.candidate);
        EXPECT_EQ(Fixture::fidelity(fresh, f.x2, f.ref2), e.accuracy);
        EXPECT_DOUBLE_EQ(relative_bit_ops(fresh, r.groups, assignment, {16, 16}), e.relative_bit_ops);
    }
    EXPECT_EQ(r.pareto.assignment, assignment);
    EXPECT_EQ(sim.encodings_json(), fresh.encodings_json());
}

TEST(Amp, CachesAreByteIdenticalAcrossRuns) {
    Fixture f;
    auto a = f.sim(), b = f.sim();
    const auto da = fresh_dir("det_a"), db = fresh_dir("det_b");
    choose_mixed_precision(a, kCandidates, f.eval1(), f.eval2(), 1.0, da, true);
    choose_mixed_precision(b, kCandidates, f.eval1(), f.eval2(), 1.0, db, true);
    for (const auto* file : {"accuracy_list.json", "pareto_list.json", "sensitivity.csv", "pareto.csv"})
        EXPECT_EQ(slurp(da / file), slurp(db / file)) << file;
}

TEST(Amp, ResumeMatchesSingleRunAndSmallerDropKeepsFile) {
    Fixture f;
    auto full_sim = f.sim();
    const auto full_dir = fresh_dir("resume_full");
    const auto full = choose_mixed_precision(full_sim, kCandidates, f.eval1(), f.eval2(), 1.0, full_dir, true);
    const double base = full.pareto.baseline_accuracy;

    // A drop that stops the search at the first entry worse than all before it.
    double worst = 0.0, d1 = -1.0;
    for (const auto& e : full.pareto.evaluated) {
        const double drop = base - e.accuracy;
        if (drop > worst) {
            d1 = (worst + drop) / 2;
            break;
        }
    }
    ASSERT_GT(d1, 0.0);

    const auto dir = fresh_dir("resume_part");
    auto part_sim = f.sim();
    const auto part = choose_mixed_precision(part_sim, kCandidates, f.eval1(), f.eval2(), d1, dir, true);
    EXPECT_LT(part.pareto.evaluated.size(), full.pareto.evaluated.size());

    const auto snapshot = slurp(dir / "pareto_list.json");
    f.calls1 = f.calls2 = 0;
    auto small_sim = f.sim();
    const auto small = choose_mixed_precision(small_sim, kCandidates, f.eval1(), f.eval2(), d1 / 4, dir, false);
    EXPECT_EQ(slurp(dir / "pareto_list.json"), snapshot);
    EXPECT_EQ(f.calls1, 0);
    EXPECT_EQ(f.calls2, 0);
    EXPECT_LE(small.pareto.accepted.size(), part.pareto.accepted.size());

    auto resumed_sim = f.sim();
    const auto resumed = choose_mixed_precision(resumed_sim, kCandidates, f.eval1(), f.eval2(), 1.0, dir, false);
    EXPECT_EQ(f.calls1, 0);
    EXPECT_EQ(slurp(dir / "pareto_list.json"), slurp(full_dir / "pareto_list.json"));
    EXPECT_EQ(resumed.pareto.assignment, full.pareto.assignment);
    EXPECT_EQ(resumed_sim.encodings_json(), full_sim.encodings_json());
}

TEST(Amp, ZeroDropWithLossyMovesKeepsMaxCandidates) {
    Fixture f;
    auto sim = f.sim();
    const auto r = choose_mixed_precision(sim, kCandidates, f.eval1(), f.eval2(), 0.0, fresh_dir("zero"), true);
    ASSERT_FALSE(r.pareto.evaluated.empty());
    ASSERT_LT(r.pareto.evaluated[0].accuracy, r.pareto.baseline_accuracy);
    EXPECT_TRUE(r.pareto.accepted.empty());
    EXPECT_EQ(r.pareto.assignment, std::vector<CandidatePair>(3, CandidatePair{16, 16}));
    for (const auto& name : sim.quantizer_names()) EXPECT_EQ(sim.quantizer(name).bitwidth, 16) << name;
}

TEST(Amp, CleanStartWipesCaches) {
    Fixture f;
    auto sim = f.sim();
    const auto dir = fresh_dir("wipe");
    choose_mixed_precision(sim, kCandidates, f.eval1(), f.eval2(), 1.0, dir, true);
    f.calls1 = 0;
    auto again = f.sim();
    choose_mixed_precision(again, kCandidates, f.eval1(), f.eval2(), 1.0, dir, true);
    EXPECT_EQ(f.calls1, 7);
}

TEST(Amp, CacheErrors) {
    Fixture f;
    auto sim = f.sim();
    const auto dir = fresh_dir("errors");
    EXPECT_THROW(choose_mixed_precision(sim, kCandidates, f.eval1(), f.eval2(), 1.0, dir, false), DataError);
    choose_mixed_precision(sim, kCandidates, f.eval1(), f.eval2(), 1.0, dir, true);
    auto other = f.sim();
    EXPECT_THROW(choose_mixed_precision(other, {{16, 16}, {8, 8}}, f.eval1(), f.eval2(), 1.0, dir, false), DataError);
    write_text(dir / "pareto_list.json", "{not json");
    EXPECT_THROW(choose_mixed_precision(other, kCandidates, f.eval1(), f.eval2(), 1.0, dir, false), DataError);
}

TEST(Amp, RejectsBadArguments) {
    Fixture f;
    auto sim = f.sim();
    EXPECT_THROW(choose_mixed_precision(sim, {}, f.eval1(), f.eval2(), 1.0, fresh_dir("bad"), true), UsageError);
    EXPECT_THROW(choose_mixed_precision(sim, {{1, 8}}, f.eval1(), f.eval2(), 1.0, fresh_dir("bad"), true), UsageError);
    EXPECT_THROW(choose_mixed_precision(sim, kCandidates, f.eval1(), f.eval2(), -0.1, fresh_dir("bad"), true),
                 UsageError);
}
