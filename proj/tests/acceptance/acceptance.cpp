// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance checks, one line per criterion:
//   criterion <n> PASS|FAIL <name> (<seconds>s, limit <limit>s) <detail>
// Exit status is nonzero when any criterion fails or exceeds its time limit.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixquant/amp.hpp"
#include "fixquant/debug.hpp"
#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"
#include "fixquant/ptq.hpp"
#include "fixquant/qat.hpp"
#include "fixquant/quantizer.hpp"
#include "fixquant/quantsim.hpp"
#include "fixquant/range_setting.hpp"
#include "fixquant/toy_models.hpp"

using namespace fixquant;
namespace fs = std::filesystem;

namespace {

struct Check {
    bool ok = true;
    int failures = 0;
    std::string first;
    std::ostringstream note;

    void expect(bool cond, const std::string& what) {
        if (cond) return;
        if (failures++ == 0) first = what;
        ok = false;
    }
    std::string detail() const {
        std::string d = note.str();
        if (!ok) d += (d.empty() ? "" : "; ") + std::to_string(failures) + " failed, first: " + first;
        return d;
    }
};

bool rel_close(double a, double b, double rel) {
    return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), 1e-300});
}

Node make(const std::string& name, NodeKind kind, std::vector<std::string> inputs) {
    Node n;
    n.name = name;
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
}

std::vector<Tensor> normal_batches(const Shape& sample, int count, std::int64_t rows, std::uint64_t seed) {
    toy::Rng rng(seed);
    Shape shape{rows};
    shape.insert(shape.end(), sample.begin(), sample.end());
    std::vector<Tensor> out;
    for (int i = 0; i < count; ++i) out.push_back(toy::random_normal(shape, rng));
    return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---- 1. quantizer algebra

// Independent scalar quantizer: round half away from zero, then clamp.
std::int64_t oracle_quantize(double x, double s, std::int64_t z, int b) {
    const double r = x / s;
    const double rounded = r >= 0 ? std::floor(r + 0.5) : -std::floor(-r + 0.5);
    const double hi = std::ldexp(1.0, b) - 1;
    return static_cast<std::int64_t>(std::clamp(rounded + static_cast<double>(z), 0.0, hi));
}

void criterion_quantizer_algebra(Check& c) {
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<int> bits(2, 16);
    std::uniform_real_distribution<double> log_scale(-4.0, 1.0), unit(0.0, 1.0);
    int inside = 0;
    for (int t = 0; t < 10000; ++t) {
        const int b = bits(rng);
        const std::int64_t levels = (std::int64_t{1} << b) - 1;
        const double s = std::pow(10.0, log_scale(rng));
        const auto z = static_cast<std::int64_t>(unit(rng) * static_cast<double>(levels + 1)) % (levels + 1);
        const QuantEncoding e{s, z, b, false, false};
        const double lo = -s * static_cast<double>(z), hi = s * static_cast<double>(levels - z);
        c.expect(rel_close(e.grid_min(), lo, 1e-9) || (lo == 0 && e.grid_min() == 0), "grid_min formula");
        c.expect(rel_close(e.grid_max(), hi, 1e-9) || (hi == 0 && e.grid_max() == 0), "grid_max formula");
        // x drawn around the grid, 10% beyond each end.
        const double span = hi - lo;
        const double x = lo - 0.1 * span + unit(rng) * 1.2 * span;
        const auto q = quantize_value(x, e);
        c.expect(q >= 0 && q <= levels, "clamp bounds");
        c.expect(q == oracle_quantize(x, s, z, b), "integer matches oracle");
        const double y = qdq_value(x, e);
        c.expect(qdq_value(0.0, e) == 0.0, "exact zero");
        c.expect(rel_close(qdq_value(y, e), y, 1e-9) || y == 0.0, "idempotent");
        if (x >= lo && x <= hi) {
            ++inside;
            c.expect(std::abs(y - x) <= s / 2 * (1 + 1e-9), "rounding error <= s/2");
        } else {
            c.expect(rel_close(y, x < lo ? lo : hi, 1e-9) || y == (x < lo ? lo : hi), "clipped to grid limit");
        }
    }
    c.note << "10000 cases, " << inside << " inside the grid";
}

// ---- 2. integer arithmetic

void criterion_integer_arithmetic(Check& c) {
    std::mt19937_64 rng(1002);
    std::uniform_int_distribution<int> dim(1, 12), u8(0, 255), s8(-127, 127);
    std::uniform_real_distribution<double> scale(0.001, 0.1);
    double worst_mm = 0.0, worst_mac = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const int n = dim(rng), k = dim(rng), m = dim(rng);
        const QuantEncoding ew{scale(rng), u8(rng), 8, false, false}, ex{scale(rng), u8(rng), 8, false, false};
        IntTensor w({n, k}), x({k, m});
        for (auto& v : w.values()) v = u8(rng);
        for (auto& v : x.values()) v = u8(rng);
        // Reference: product of the dequantized operands.
        const Tensor y = integer_matmul_asymmetric(w, x, ew, ex);
        double ref_max = 0.0, err = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                double acc = 0.0;
                for (int l = 0; l < k; ++l)
                    acc += ew.scale * static_cast<double>(w.values()[i * k + l] - ew.zero_point) * ex.scale *
                           static_cast<double>(x.values()[l * m + j] - ex.zero_point);
                ref_max = std::max(ref_max, std::abs(acc));
                err = std::max(err, std::abs(acc - y[i * m + j]));
            }
        const double rel = err / std::max(ref_max, 1e-300);
        worst_mm = std::max(worst_mm, rel);
        c.expect(rel <= 1e-9, "asymmetric expansion");

        // Symmetric int8 weights, asymmetric uint8 input, int32 accumulator.
        const QuantEncoding sw{scale(rng), 0, 8, true, true};
        IntTensor ws({n, k}), bias({n});
        for (auto& v : ws.values()) v = s8(rng);
        for (auto& v : bias.values()) v = s8(rng) * 50;
        const IntTensor acc = integer_mac(ws, x, bias, sw, ex);
        const Tensor out = dequantize_accumulator(acc, sw.scale * ex.scale);
        double mac_ref_max = 0.0, mac_err = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                double r = sw.scale * ex.scale * static_cast<double>(bias.values()[i]);
                for (int l = 0; l < k; ++l)
                    r += sw.scale * static_cast<double>(ws.values()[i * k + l]) * ex.scale *
                         static_cast<double>(x.values()[l * m + j] - ex.zero_point);
                mac_ref_max = std::max(mac_ref_max, std::abs(r));
                mac_err = std::max(mac_err, std::abs(r - out[i * m + j]));
            }
        const double mac_rel = mac_err / std::max(mac_ref_max, 1e-300);
        worst_mac = std::max(worst_mac, mac_rel);
        c.expect(mac_rel <= 1e-9, "32-bit accumulator path");
    }
    c.note << "1000 matmuls, worst rel " << worst_mm << " (expansion) " << worst_mac << " (mac)";
}

// ---- 3. function preservation

void criterion_function_preservation(Check& c) {
    double worst = 0.0;
    int skipped = 0, models = 0;
    auto check_model = [&](const GraphModel& model, const std::string& label) {
        ++models;
        const auto inputs = normal_batches({3, 8, 8}, 1, 100, 3000 + models).front();
        const Tensor ref = forward(model, inputs);
        FoldReport fr;
        const auto folded = fold_batch_norms(model, &fr);
        const double d_fold = max_abs_diff(forward(folded, inputs), ref);
        auto [eq, report] = equalize_model(model);
        const double d_cle = max_abs_diff(forward(eq, inputs), ref);
        for (const auto& h : report.high_bias) skipped += h.applied ? 0 : 1;
        worst = std::max({worst, d_fold, d_cle});
        c.expect(d_fold <= 1e-5, label + ": BN folding");
        c.expect(d_cle <= 1e-5, label + ": CLE");
    };
    for (std::uint64_t seed = 0; seed < 5; ++seed) check_model(toy::conv_bn_relu_conv(400 + seed), "random model");
    // Skip cases: layer2 zero-pads, and no batchnorm statistics at all.
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        auto padded = toy::conv_bn_relu_conv(500 + seed);
        GraphModel g;
        for (auto n : padded.nodes()) {
            if (n.name == "conv2") n.attrs.padding = {1, 1};
            g.add_node(n);
        }
        check_model(g, "padded layer2");
        GraphModel no_bn;
        for (auto n : padded.nodes()) {
            if (n.kind == NodeKind::batchnorm) continue;
            if (n.name == "relu1") n.inputs = {"conv1"};
            no_bn.add_node(n);
        }
        check_model(no_bn, "no batchnorm");
    }
    c.expect(skipped > 0, "skip cases exercised");
    c.note << models << " models x 100 inputs, worst max-abs " << worst << ", " << skipped
           << " high-bias skips";
}

// ---- 4. range setting

ChannelStats stats_of(const std::vector<double>& v) {
    RangeAccumulator acc;
    acc.observe(Tensor({static_cast<std::int64_t>(v.size())}, v));
    return acc.channels().front();
}

double measured_mse(const std::vector<double>& v, const QuantEncoding& e) {
    double s = 0.0;
    for (double x : v) s += (x - qdq_value(x, e)) * (x - qdq_value(x, e));
    return s / static_cast<double>(v.size());
}

void criterion_range_setting(Check& c) {
    std::mt19937_64 rng(1004);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> mag(10.0, 40.0);
    const int bw = 8, steps = 100;
    int with_outlier = 0, clipped = 0;
    for (int t = 0; t < 50; ++t) {
        std::vector<double> v;
        for (int i = 0; i < 16; ++i) v.push_back(n(rng));
        const bool outlier = t % 2 == 0;
        if (outlier) {
            // Replace one value by a >= 10 sigma outlier of the other 15.
            double mean = 0.0, var = 0.0;
            for (int i = 0; i < 15; ++i) mean += v[i] / 15;
            for (int i = 0; i < 15; ++i) var += (v[i] - mean) * (v[i] - mean) / 15;
            v[15] = mean + (t % 4 == 0 ? 1 : -1) * mag(rng) * std::sqrt(var);
            ++with_outlier;
        }
        const auto s = stats_of(v);
        const auto sq = compute_sqnr(s, bw, false);
        // Brute force over the same candidate grid.
        const double step = (s.max - s.min) / steps;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < steps; ++i)
            for (int j = 0; i + j < steps; ++j)
                best = std::min(best, histogram_mse(s.histogram, encoding_from_range(s.min + i * step, s.max - j * step,
                                                                                    bw, false)));
        c.expect(histogram_mse(s.histogram, sq) == best, "argmin over candidate grid, vector " + std::to_string(t));
        const auto mm = compute_minmax(s, bw, false);
        if (!(sq == mm)) ++clipped;
        if (outlier) c.expect(measured_mse(v, sq) <= measured_mse(v, mm), "MSE <= min-max, vector " + std::to_string(t));
    }
    c.note << "50 vectors, " << with_outlier << " with outliers, " << clipped << " clipped by SQNR";
}

// ---- 5. AdaRound

double layer_output_error(const GraphModel& model, const std::string& layer, const Tensor& wq,
                          const std::vector<Tensor>& feed) {
    GraphModel q = model;
    q.set_param(layer, "weight", wq);
    double e = 0.0;
    std::int64_t count = 0;
    for (const auto& x : feed) {
        const Tensor a = forward(model, x), b = forward(q, x);
        for (std::int64_t i = 0; i < a.size(); ++i) e += (a[i] - b[i]) * (a[i] - b[i]);
        count += a.size();
    }
    return e / static_cast<double>(count);
}

struct FourWeight {
    GraphModel model;
    std::vector<Tensor> feed;
};

FourWeight four_weight(std::uint64_t seed) {
    toy::Rng rng(seed);
    GraphModel g;
    Node in = make("input", NodeKind::input, {});
    in.attrs.shape = {4};
    g.add_node(in);
    Node fc = make("fc", NodeKind::linear, {"input"});
    fc.params["weight"] = toy::random_normal({1, 4}, rng);
    g.add_node(fc);
    g.add_node(make("output", NodeKind::output, {"fc"}));
    std::vector<Tensor> feed;
    for (int b = 0; b < 4; ++b) {
        Tensor x = toy::random_normal({32, 4}, rng);
        for (std::int64_t r = 0; r < 32; ++r) {
            x[r * 4 + 1] += 0.8 * x[r * 4];
            x[r * 4 + 3] -= 0.6 * x[r * 4 + 2];
        }
        feed.push_back(x);
    }
    return {g, feed};
}

QuantEncoding weight_encoding(const GraphModel& model, const std::string& layer, int bw) {
    auto sim = create_quantsim(model, bw);
    sim.compute_param_encodings();
    return sim.quantizer(layer + ".weight").encodings.front();
}

void criterion_adaround(Check& c) {
    // The designated instance is seed 1; seeds 2..5 are reported for context.
    int reg0_matches = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto inst = four_weight(seed);
        const Tensor& w = inst.model.node("fc").param("weight");
        const auto e = weight_encoding(inst.model, "fc", 4);
        double best = std::numeric_limits<double>::infinity();
        for (int mask = 0; mask < 16; ++mask) {
            Tensor wq = w;
            for (int i = 0; i < 4; ++i)
                wq[i] = e.scale * (std::clamp<double>(std::floor(w[i] / e.scale) + ((mask >> i) & 1),
                                                      static_cast<double>(e.int_min()),
                                                      static_cast<double>(e.int_max())));
            best = std::min(best, layer_output_error(inst.model, "fc", wq, inst.feed));
        }
        const double nearest = layer_output_error(inst.model, "fc", qdq(w, e), inst.feed);

        AdaRoundParams p;
        p.num_iterations = 2000;
        const auto [rounded, report] = adaround(inst.model, inst.feed, p, 4);
        const Tensor& wr = rounded.node("fc").param("weight");
        const double ada = layer_output_error(inst.model, "fc", wr, inst.feed);
        if (seed == 1) {
            for (int i = 0; i < 4; ++i) {
                const double f = std::floor(w[i] / e.scale), qi = std::round(wr[i] / e.scale);
                c.expect(qi == f || qi == f + 1, "integer in {floor, floor+1}");
            }
            c.expect(ada <= nearest * (1 + 1e-6), "loss <= nearest");
        }
        p.reg_param = 0.0;
        const auto [r0, rep0] = adaround(inst.model, inst.feed, p, 4);
        const double ada0 = layer_output_error(inst.model, "fc", r0.node("fc").param("weight"), inst.feed);
        const bool match = std::abs(ada0 - best) <= 1e-6 * (1 + best);
        reg0_matches += match ? 1 : 0;
        if (seed == 1) c.expect(match, "reg_param=0 equals brute-force optimum");
    }

    // Random 3x3 conv at 4-bit weights.
    toy::Rng rng(1005);
    GraphModel g;
    Node in = make("input", NodeKind::input, {});
    in.attrs.shape = {4, 8, 8};
    g.add_node(in);
    Node conv = make("conv", NodeKind::conv2d, {"input"});
    conv.attrs.padding = {1, 1};
    conv.params["weight"] = toy::random_normal({6, 4, 3, 3}, rng, 0.3);
    conv.params["bias"] = toy::random_normal({6}, rng, 0.1);
    g.add_node(conv);
    g.add_node(make("output", NodeKind::output, {"conv"}));
    const auto feed = normal_batches({4, 8, 8}, 4, 8, 1006);
    const auto e = weight_encoding(g, "conv", 4);
    const double nearest = layer_output_error(g, "conv", qdq(g.node("conv").param("weight"), e), feed);
    AdaRoundParams p;
    p.num_iterations = 2000;
    const auto [rounded, report] = adaround(g, feed, p, 4);
    const double ada = layer_output_error(g, "conv", rounded.node("conv").param("weight"), feed);
    c.expect(ada < nearest, "conv: strictly below nearest");
    c.note << "conv MSE " << ada << " vs nearest " << nearest << "; reg_param=0 optimum on " << reg0_matches
           << "/5 instances (gated on the designated one)";
}

// ---- 6. STE gradients

// Frozen-residual surrogate of a 2-layer MLP sim, written out by hand:
// every quantizer acts as v + (qdq(v0) - v0) inside its grid and as the
// constant qdq(v0) where v0 was clipped.
struct Surrogate {
    const QuantSimModel& sim;
    Tensor x, t;
    std::map<std::string, std::vector<double>> base_in, base_out;
    bool recording = true;

    std::vector<double> q(const std::string& name, const std::vector<double>& v) {
        if (!sim.has_quantizer(name) || !sim.quantizer(name).enabled) return v;
        const auto& e = sim.quantizer(name).encodings.front();
        if (recording) {
            base_in[name] = v;
            std::vector<double> out(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = qdq_value(v[i], e);
            base_out[name] = out;
            return out;
        }
        const auto& v0 = base_in.at(name);
        const auto& q0 = base_out.at(name);
        std::vector<double> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = (v0[i] >= e.grid_min() && v0[i] <= e.grid_max()) ? v[i] + (q0[i] - v0[i]) : q0[i];
        return out;
    }

    // Returns the loss and the smallest |relu input| seen.
    std::pair<double, double> loss(const std::map<std::string, std::vector<double>>& p) {
        const std::int64_t n = x.dim(0), d0 = x.dim(1);
        const std::int64_t d1 = static_cast<std::int64_t>(p.at("fc1.bias").size());
        const std::int64_t d2 = static_cast<std::int64_t>(p.at("fc2.bias").size());
        const auto xi = q("input", {x.values().begin(), x.values().end()});
        const auto w1 = q("fc1.weight", p.at("fc1.weight")), b1 = q("fc1.bias", p.at("fc1.bias"));
        const auto w2 = q("fc2.weight", p.at("fc2.weight")), b2 = q("fc2.bias", p.at("fc2.bias"));
        std::vector<double> z1(n * d1);
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t o = 0; o < d1; ++o) {
                double a = b1[o];
                for (std::int64_t i = 0; i < d0; ++i) a += w1[o * d0 + i] * xi[s * d0 + i];
                z1[s * d1 + o] = a;
            }
        z1 = q("fc1", z1);
        double kink = std::numeric_limits<double>::infinity();
        std::vector<double> a1(z1.size());
        for (std::size_t i = 0; i < z1.size(); ++i) {
            kink = std::min(kink, std::abs(z1[i]));
            a1[i] = std::max(0.0, z1[i]);
        }
        a1 = q("relu1", a1);
        std::vector<double> z2(n * d2);
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t o = 0; o < d2; ++o) {
                double a = b2[o];
                for (std::int64_t i = 0; i < d1; ++i) a += w2[o * d1 + i] * a1[s * d1 + i];
                z2[s * d2 + o] = a;
            }
        z2 = q("fc2", z2);
        double l = 0.0;
        for (std::size_t i = 0; i < z2.size(); ++i) l += (z2[i] - t[static_cast<std::int64_t>(i)]) * (z2[i] - t[static_cast<std::int64_t>(i)]);
        return {l / static_cast<double>(z2.size()), kink};
    }
};

void criterion_ste(Check& c) {
    const auto model = toy::mlp({4, 10, 3}, 1006);
    auto sim = create_quantsim(model, 4, 8);
    // fc1 and relu1 form one supergroup: only the relu output is quantized.
    sim.set_enabled("fc1", false);
    sim.set_enabled("fc1.bias", true);
    sim.set_enabled("fc2.bias", true);
    toy::Rng rng(1007);
    const Tensor x = toy::random_normal({12, 4}, rng);
    const Tensor t = toy::random_normal({12, 3}, rng);
    Tensor wide = x;
    for (auto& v : wide.values()) v *= 1.5;
    sim.compute_encodings(std::vector<Tensor>{x, wide});

    const auto tape = record_forward(sim, x);
    const auto grads = backward(tape, mse_loss(tape.output(), t).grad);

    Surrogate s{sim, x, t, {}, {}, true};
    std::map<std::string, std::vector<double>> params;
    for (const auto* layer : {"fc1", "fc2"})
        for (const auto* role : {"weight", "bias"}) {
            const Tensor& v = sim.graph().node(layer).param(role);
            params[GraphModel::param_name(layer, role)] = {v.values().begin(), v.values().end()};
        }
    const double base = s.loss(params).first;
    c.expect(rel_close(base, mse_loss(tape.output(), t).loss, 1e-12), "surrogate reproduces the sim loss");
    s.recording = false;

    int probes = 0, skipped = 0;
    double worst = 0.0;
    for (const auto& [name, value] : params) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double h = 1e-6 * std::max(1.0, std::abs(value[i]));
            auto shifted = params;
            shifted[name][i] = value[i] + h;
            const auto [lp, kp] = s.loss(shifted);
            shifted[name][i] = value[i] - h;
            const auto [lm, km] = s.loss(shifted);
            // Probe only where no relu input crosses zero within the step.
            if (std::min(kp, km) < 1e-4) {
                ++skipped;
                continue;
            }
            ++probes;
            const double fd = (lp - lm) / (2 * h);
            const double g = grads.at(name)[static_cast<std::int64_t>(i)];
            const double err = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-6});
            worst = std::max(worst, err);
            c.expect(err <= 1e-3, name + "[" + std::to_string(i) + "]");
        }
    }
    c.expect(probes > 0, "some probes");
    c.note << probes << " probes, " << skipped << " skipped, worst rel " << worst;
}

// ---- 7. QAT

void criterion_qat(Check& c) {
    auto model = toy::mlp({2, 24, 24, 2}, 1017);
    const auto train = toy::spiral(512, 1018, 0.05);
    const auto test = toy::spiral(512, 1019, 0.05);
    QatOptions fo;
    fo.epochs = 60;
    fo.learning_rate = 0.2;
    fo.lr_step_epochs = 40;
    fo.batch_size = 16;
    fo.seed = 1020;
    fp32_train(model, train, fo);
    const double fp_acc = evaluate(model, test).second;

    auto sim = create_quantsim(model, 4, 8);
    sim.compute_encodings(make_batches(train.inputs, 128));
    const double ptq_acc = evaluate(sim, test).second;
    QatOptions qo;
    qo.epochs = 10;
    qo.learning_rate = 0.02;
    qo.batch_size = 16;
    qo.seed = 1021;
    qat_train(sim, train, qo);
    const double qat_acc = evaluate(sim, test).second;
    c.expect(qat_acc >= ptq_acc, "QAT accuracy >= PTQ accuracy");

    // Disabled quantizers: identical to float SGD.
    auto plain = create_quantsim(model, 4, 8);
    plain.set_all_enabled(false);
    GraphModel fp = model;
    QatOptions so;
    so.epochs = 3;
    so.learning_rate = 0.05;
    so.batch_size = 10;
    so.seed = 1022;
    const auto qr = qat_train(plain, train, so);
    const auto fr = fp32_train(fp, train, so);
    c.expect(plain.graph() == fp, "disabled QAT weights bit-identical to FP32 SGD");
    bool same_losses = qr.epochs.size() == fr.epochs.size();
    for (std::size_t e = 0; same_losses && e < qr.epochs.size(); ++e) same_losses = qr.epochs[e].loss == fr.epochs[e].loss;
    c.expect(same_losses, "disabled QAT losses bit-identical");
    c.note << "fp32 " << fp_acc << ", PTQ W4/A8 " << ptq_acc << ", QAT " << qat_acc;
}

// ---- 8. AMP

void criterion_amp(Check& c, const fs::path& work) {
    const auto model = toy::mlp({4, 16, 16, 3}, 1031);
    const auto x2 = normal_batches({4}, 1, 96, 1032).front();
    const auto x1 = slice_rows(x2, 0, 24);
    const Tensor ref1 = forward(model, x1), ref2 = forward(model, x2);
    int calls1 = 0;
    auto fidelity = [](const QuantSimModel& s, const Tensor& x, const Tensor& ref) {
        const Tensor y = s.forward(x);
        double e = 0.0;
        for (std::int64_t i = 0; i < y.size(); ++i) e += (y[i] - ref[i]) * (y[i] - ref[i]);
        return -e / static_cast<double>(y.size());
    };
    EvalCallback eval1 = [&](const QuantSimModel& s) {
        ++calls1;
        return fidelity(s, x1, ref1);
    };
    EvalCallback eval2 = [&](const QuantSimModel& s) { return fidelity(s, x2, ref2); };
    auto fresh_sim = [&] {
        auto s = create_quantsim(model, 8, 8);
        s.compute_encodings(std::vector<Tensor>{x2});
        return s;
    };
    const std::vector<CandidatePair> cands{{16, 16}, {16, 8}, {8, 16}};
    auto slurp = [](const fs::path& p) {
        const auto b = read_bytes(p);
        return std::string(b.begin(), b.end());
    };

    const auto full_dir = work / "amp_full";
    fs::remove_all(full_dir);
    auto sim = fresh_sim();
    const auto full = choose_mixed_precision(sim, cands, eval1, eval2, 1.0, full_dir, true);
    c.expect(full.groups.size() == 3, "three groups");
    c.expect(full.pareto.evaluated.size() == 3, "full profile has one move per group");
    double prev = 1.0;
    auto replay = fresh_sim();
    for (const auto& g : full.groups) apply_candidate(replay, g, cands[0]);
    for (const auto& e : full.pareto.evaluated) {
        c.expect(e.relative_bit_ops < prev, "strictly decreasing relative bit-ops");
        prev = e.relative_bit_ops;
        apply_candidate(replay, full.groups[static_cast<std::size_t>(e.group)], e.candidate);
        c.expect(eval2(replay) == e.accuracy, "entry accuracy reproduced by fresh evaluation");
    }

    // Partial run: stop at the first entry that is worse than everything before it.
    const double base = full.pareto.baseline_accuracy;
    double worst = 0.0, d1 = -1.0;
    for (const auto& e : full.pareto.evaluated) {
        if (base - e.accuracy > worst) {
            d1 = (worst + base - e.accuracy) / 2;
            break;
        }
    }
    c.expect(d1 > 0.0, "a drop that interrupts the search exists");
    const auto dir = work / "amp_resume";
    fs::remove_all(dir);
    auto part = fresh_sim();
    choose_mixed_precision(part, cands, eval1, eval2, std::max(d1, 0.0), dir, true);
    const auto partial_file = slurp(dir / "pareto_list.json");

    auto smaller = fresh_sim();
    calls1 = 0;
    choose_mixed_precision(smaller, cands, eval1, eval2, std::max(d1, 0.0) / 4, dir, false);
    c.expect(slurp(dir / "pareto_list.json") == partial_file, "smaller drop leaves the pareto file unmodified");
    c.expect(calls1 == 0, "cached rerun performs zero phase-1 evaluations");

    auto resumed = fresh_sim();
    choose_mixed_precision(resumed, cands, eval1, eval2, 1.0, dir, false);
    c.expect(slurp(dir / "pareto_list.json") == slurp(full_dir / "pareto_list.json"),
             "resumed list byte-identical to a single full run");
    c.expect(calls1 == 0, "resume performs zero phase-1 evaluations");
    c.note << "relative bit-ops";
    for (const auto& e : full.pareto.evaluated) c.note << ' ' << e.relative_bit_ops;
}

// ---- 9. round trips

void criterion_round_trips(Check& c, const fs::path& work) {
    const auto model = fold_batch_norms(toy::depthwise_net(1041));
    const auto feed = normal_batches({3, 8, 8}, 2, 16, 1042);
    const Tensor probe = normal_batches({3, 8, 8}, 1, 32, 1043).front();
    auto sim = create_quantsim(model, 6, 8, RangeKind::sqnr);
    sim.compute_encodings(feed);
    const Tensor y0 = sim.forward(probe);

    const auto prefix = work / "rt_model";
    sim.export_model(prefix);
    const auto loaded = load_model(prefix.string() + ".json");
    c.expect(loaded == sim.graph(), "model file round-trips bit-identically");
    auto imported = create_quantsim(loaded, 6, 8, RangeKind::sqnr);
    imported.import_encodings(read_json(prefix.string() + ".encodings.json"), false);
    c.expect(max_abs_diff(imported.forward(probe), y0) == 0.0, "imported sim output bit-identical");
    c.expect(imported.encodings_json() == sim.encodings_json(), "encodings JSON round-trips");

    auto frozen = create_quantsim(loaded, 6, 8, RangeKind::sqnr);
    frozen.import_encodings(read_json(prefix.string() + ".encodings.json"), true);
    const auto before = frozen.encodings_json();
    frozen.compute_encodings(normal_batches({3, 8, 8}, 2, 16, 1044));
    c.expect(frozen.encodings_json() == before, "frozen encodings survive compute_encodings");
    c.expect(max_abs_diff(frozen.forward(probe), y0) == 0.0, "frozen sim output unchanged");
    c.note << sim.quantizer_names().size() << " quantizers";
}

// ---- 10. debug flow

void criterion_debug(Check& c) {
    auto model = toy::mlp({6, 16, 16, 16, 4}, 1051);
    Tensor w = model.node("fc3").param("weight");
    w[17] = 60.0;
    model.set_param("fc3", "weight", w);
    const auto data = toy::teacher_regression(model, {6}, 128, 1052);
    DebugOptions o;
    o.target_bw = 8;
    const auto r = debug_quantization(model, data, o);
    c.expect(r.fp32_ok, "FP32 sanity gate passes");
    c.expect(!r.sweep.empty() && r.sweep.front().quantizer == "fc3.weight", "outlier layer ranks first");
    c.note << "top " << (r.sweep.empty() ? "-" : r.sweep.front().quantizer) << " drop "
           << (r.sweep.empty() ? 0.0 : r.sweep.front().drop);
    if (r.sweep.size() > 1) c.note << ", next " << r.sweep[1].quantizer << " drop " << r.sweep[1].drop;
}

}  // namespace

int main() {
    const auto work = fs::temp_directory_path() / "fixquant_acceptance";
    fs::remove_all(work);
    fs::create_directories(work);

    struct Criterion {
        int id;
        const char* name;
        double limit;
        std::function<void(Check&)> run;
    };
    const std::vector<Criterion> criteria{
        {1, "quantizer algebra", 5, criterion_quantizer_algebra},
        {2, "integer arithmetic", 5, criterion_integer_arithmetic},
        {3, "function preservation", 10, criterion_function_preservation},
        {4, "range setting vs oracle", 10, criterion_range_setting},
        {5, "adaround oracle", 60, criterion_adaround},
        {6, "STE gradient check", 10, criterion_ste},
        {7, "QAT property", 120, criterion_qat},
        {8, "AMP suite", 60, [&](Check& c) { criterion_amp(c, work); }},
        {9, "round trips", 5, [&](Check& c) { criterion_round_trips(c, work); }},
        {10, "debug flow", 30, criterion_debug},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        Check c;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            cr.run(c);
        } catch (const std::exception& e) {
            c.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (secs > cr.limit) c.expect(false, "over time limit");
        failed += c.ok ? 0 : 1;
        char timing[64];
        std::snprintf(timing, sizeof timing, "(%.2fs, limit %.0fs)", secs, cr.limit);
        std::cout << "criterion " << cr.id << ' ' << (c.ok ? "PASS" : "FAIL") << ' ' << cr.name << ' ' << timing << ' '
                  << c.detail() << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
