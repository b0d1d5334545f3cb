// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/ptq.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"

namespace fixquant {

namespace {

Tensor zeros_like_bias(const Node& n) { return Tensor({n.param("weight").dim(0)}); }

Tensor bias_or_zeros(const Node& n) { return n.has_param("bias") ? n.param("bias") : zeros_like_bias(n); }

// Elements per output row of a weight tensor.
std::int64_t row_size(const Tensor& w) { return w.size() / w.dim(0); }

// For each input channel of `layer2`, the flat weight indices that read it.
// `channels` is the channel count of the tensor feeding layer2; a linear layer
// fed by a feature map sees each channel as a contiguous block of features.
std::vector<std::vector<std::int64_t>> input_channel_indices(const Node& layer2, std::int64_t channels) {
    const Tensor& w = layer2.param("weight");
    std::vector<std::vector<std::int64_t>> idx(static_cast<std::size_t>(channels));
    if (layer2.kind == NodeKind::linear) {
        const std::int64_t features = w.dim(1);
        if (features % channels != 0)
            throw DataError("layer '" + layer2.name + "' has " + std::to_string(features) +
                            " inputs, not a multiple of " + std::to_string(channels) + " channels");
        const std::int64_t block = features / channels;
        for (std::int64_t o = 0; o < w.dim(0); ++o)
            for (std::int64_t c = 0; c < channels; ++c)
                for (std::int64_t b = 0; b < block; ++b) idx[c].push_back(o * features + c * block + b);
        return idx;
    }
    const std::int64_t groups = layer2.attrs.groups;
    const std::int64_t cpg = w.dim(1);
    if (cpg * groups != channels)
        throw DataError("layer '" + layer2.name + "' expects " + std::to_string(cpg * groups) + " channels, got " +
                        std::to_string(channels));
    const std::int64_t opg = w.dim(0) / groups;
    const std::int64_t taps = w.dim(2) * w.dim(3);
    for (std::int64_t c = 0; c < channels; ++c) {
        const std::int64_t g = c / cpg, local = c % cpg;
        for (std::int64_t o = g * opg; o < (g + 1) * opg; ++o)
            for (std::int64_t t = 0; t < taps; ++t) idx[c].push_back((o * cpg + local) * taps + t);
    }
    return idx;
}

// The node between layer1 and layer2 (a relu) or empty when they are adjacent.
std::optional<std::string> pair_link(const GraphModel& g, const std::string& layer1, const std::string& layer2) {
    const auto& in = g.node(layer2).inputs;
    if (in.size() != 1) throw UsageError("'" + layer2 + "' is not a single-input layer");
    if (in.front() == layer1) return std::nullopt;
    const Node& mid = g.node(in.front());
    if (mid.kind == NodeKind::relu && mid.inputs.size() == 1 && mid.inputs.front() == layer1) return mid.name;
    throw UsageError("'" + layer1 + "' and '" + layer2 + "' are not a consecutive layer pair");
}

void check_pair(const GraphModel& g, const std::string& layer1, const std::string& layer2) {
    for (const auto* name : {&layer1, &layer2})
        if (!is_mac_layer(g.node(*name).kind)) throw UsageError("'" + *name + "' is not a linear or conv2d layer");
    (void)pair_link(g, layer1, layer2);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

GraphModel fold_batch_norms(const GraphModel& model, FoldReport* report) {
    GraphModel out = model;
    FoldReport local;
    for (const auto& bn : model.nodes()) {
        if (bn.kind != NodeKind::batchnorm) continue;
        const Node* prev = out.find(bn.inputs.front());
        const bool foldable = prev != nullptr && is_mac_layer(prev->kind) && out.consumers(prev->name).size() == 1 &&
                              !prev->has_param("bn_gamma");
        if (!foldable) {
            local.unfolded.push_back(bn.name);
            continue;
        }
        const Tensor& gamma = bn.param("gamma");
        const Tensor& beta = bn.param("beta");
        const Tensor& mean = bn.param("running_mean");
        const Tensor& var = bn.param("running_var");
        Tensor w = prev->param("weight");
        Tensor b = bias_or_zeros(*prev);
        const std::int64_t channels = w.dim(0);
        if (gamma.size() != channels)
            throw DataError("batchnorm '" + bn.name + "' has " + std::to_string(gamma.size()) + " channels, layer '" +
                            prev->name + "' has " + std::to_string(channels));
        const std::int64_t rs = row_size(w);
        for (std::int64_t c = 0; c < channels; ++c) {
            const double k = gamma[c] / std::sqrt(var[c] + bn.attrs.eps);
            for (std::int64_t j = 0; j < rs; ++j) w[c * rs + j] *= k;
            b[c] = beta[c] + k * (b[c] - mean[c]);
        }
        const std::string layer = prev->name;
        out.set_param(layer, "weight", w);
        out.set_param(layer, "bias", b);
        out.set_param(layer, "bn_gamma", gamma);
        out.set_param(layer, "bn_beta", beta);
        out.bypass_node(bn.name);
        local.folded.emplace_back(bn.name, layer);
    }
    if (report != nullptr) *report = std::move(local);
    return out;
}

int replace_relu6_with_relu(GraphModel& model) {
    int n = 0;
    std::vector<std::string> names;
    for (const auto& node : model.nodes())
        if (node.kind == NodeKind::relu6) names.push_back(node.name);
    for (const auto& name : names) {
        model.set_kind(name, NodeKind::relu);
        ++n;
    }
    return n;
}

std::vector<std::pair<std::string, std::string>> find_cle_pairs(const GraphModel& model) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (auto idx : model.topo_order()) {
        const Node& l1 = model.nodes()[idx];
        if (!is_mac_layer(l1.kind)) continue;
        auto next = model.consumers(l1.name);
        if (next.size() != 1) continue;
        const Node* cand = &model.node(next.front());
        if (cand->kind == NodeKind::relu) {
            next = model.consumers(cand->name);
            if (next.size() != 1) continue;
            cand = &model.node(next.front());
        }
        if (is_mac_layer(cand->kind)) pairs.emplace_back(l1.name, cand->name);
    }
    return pairs;
}

std::pair<std::vector<double>, std::vector<double>> pair_ranges(const GraphModel& model, const std::string& layer1,
                                                                const std::string& layer2) {
    check_pair(model, layer1, layer2);
    const Tensor& w1 = model.node(layer1).param("weight");
    const Tensor& w2 = model.node(layer2).param("weight");
    const std::int64_t channels = w1.dim(0);
    const std::int64_t rs = row_size(w1);
    std::vector<double> r1(channels, 0.0), r2(channels, 0.0);
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t j = 0; j < rs; ++j) r1[c] = std::max(r1[c], std::abs(w1[c * rs + j]));
    const auto idx = input_channel_indices(model.node(layer2), channels);
    for (std::int64_t c = 0; c < channels; ++c)
        for (auto i : idx[c]) r2[c] = std::max(r2[c], std::abs(w2[i]));
    return {r1, r2};
}

CLEPair cross_layer_scale(GraphModel& model, const std::string& layer1, const std::string& layer2) {
    CLEPair p;
    p.layer1 = layer1;
    p.layer2 = layer2;
    std::tie(p.range1_before, p.range2_before) = pair_ranges(model, layer1, layer2);
    const std::size_t channels = p.range1_before.size();
    p.scales.assign(channels, 1.0);
    for (std::size_t c = 0; c < channels; ++c) {
        const double r1 = p.range1_before[c], r2 = p.range2_before[c];
        // A dead channel on either side carries no information to balance.
        if (r1 > 0.0 && r2 > 0.0) p.scales[c] = std::sqrt(r1 * r2) / r2;
    }

    const Node& n1 = model.node(layer1);
    Tensor w1 = n1.param("weight");
    const std::int64_t rs = row_size(w1);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::int64_t j = 0; j < rs; ++j) w1[static_cast<std::int64_t>(c) * rs + j] /= p.scales[c];
    auto divide = [&](const std::string& role) {
        if (!n1.has_param(role)) return;
        Tensor t = n1.param(role);
        for (std::size_t c = 0; c < channels; ++c) t[static_cast<std::int64_t>(c)] /= p.scales[c];
        model.set_param(layer1, role, t);
    };
    divide("bias");
    divide("bn_gamma");
    divide("bn_beta");
    model.set_param(layer1, "weight", w1);

    const Node& n2 = model.node(layer2);
    Tensor w2 = n2.param("weight");
    const auto idx = input_channel_indices(n2, static_cast<std::int64_t>(channels));
    for (std::size_t c = 0; c < channels; ++c)
        for (auto i : idx[c]) w2[i] *= p.scales[c];
    model.set_param(layer2, "weight", w2);

    std::tie(p.range1_after, p.range2_after) = pair_ranges(model, layer1, layer2);
    return p;
}

HighBiasEntry absorb_high_bias(GraphModel& model, const std::string& layer1, const std::string& layer2) {
    check_pair(model, layer1, layer2);
    HighBiasEntry e;
    e.layer1 = layer1;
    e.layer2 = layer2;
    const Node& n1 = model.node(layer1);
    const Node& n2 = model.node(layer2);
    if (!n1.has_param("bn_gamma") || !n1.has_param("bn_beta")) {
        e.reason = "no batchnorm statistics on " + layer1;
        return e;
    }
    // Padded border taps would see the unshifted zero, so the bias shift is
    // not representable in layer2's bias.
    if (n2.kind == NodeKind::conv2d && (n2.attrs.padding[0] > 0 || n2.attrs.padding[1] > 0)) {
        e.reason = layer2 + " zero-pads its input";
        return e;
    }
    const Tensor& gamma = n1.param("bn_gamma");
    Tensor beta = n1.param("bn_beta");
    Tensor b1 = bias_or_zeros(n1);
    const std::int64_t channels = gamma.size();
    e.absorbed.assign(static_cast<std::size_t>(channels), 0.0);
    for (std::int64_t c = 0; c < channels; ++c) e.absorbed[c] = std::max(0.0, beta[c] - 3.0 * std::abs(gamma[c]));

    const Tensor& w2 = n2.param("weight");
    Tensor b2 = bias_or_zeros(n2);
    const std::int64_t rs2 = row_size(w2);
    const auto idx = input_channel_indices(n2, channels);
    for (std::int64_t c = 0; c < channels; ++c) {
        const double shift = e.absorbed[c];
        if (shift == 0.0) continue;
        b1[c] -= shift;
        beta[c] -= shift;
        for (auto i : idx[c]) b2[i / rs2] += w2[i] * shift;
    }
    model.set_param(layer1, "bias", b1);
    model.set_param(layer1, "bn_beta", beta);
    model.set_param(layer2, "bias", b2);
    e.applied = true;
    return e;
}

std::pair<GraphModel, CLEReport> equalize_model(const GraphModel& model) {
    CLEReport report;
    GraphModel g = fold_batch_norms(model, &report.fold);
    report.relu6_replaced = replace_relu6_with_relu(g);
    const auto pairs = find_cle_pairs(g);
    for (const auto& [a, b] : pairs) report.pairs.push_back(cross_layer_scale(g, a, b));
    for (const auto& [a, b] : pairs) report.high_bias.push_back(absorb_high_bias(g, a, b));
    return {std::move(g), std::move(report)};
}

std::vector<double> channel_means(const Tensor& t) {
    if (t.rank() < 2) throw DataError("channel means need a tensor of rank >= 2, got " + shape_to_string(t.shape()));
    const auto layout = channel_layout(t.shape(), 1);
    std::vector<double> sums(static_cast<std::size_t>(layout.channels), 0.0);
    for (std::int64_t o = 0; o < layout.outer; ++o)
        for (std::int64_t c = 0; c < layout.channels; ++c)
            for (std::int64_t i = 0; i < layout.inner; ++i) sums[c] += t[(o * layout.channels + c) * layout.inner + i];
    for (auto& s : sums) s /= static_cast<double>(layout.outer * layout.inner);
    return sums;
}

double relu_normal_mean(double mean, double stddev) {
    stddev = std::abs(stddev);
    if (stddev == 0.0) return std::max(0.0, mean);
    const double a = mean / stddev;
    return stddev * normal_pdf(a) + mean * normal_cdf(a);
}

namespace {

// Expected per-channel input of `layer` from folded batchnorm statistics, when
// the layer reads a folded layer directly or through a relu.
std::optional<std::vector<double>> analytic_input_mean(const GraphModel& g, const Node& layer) {
    const Node* src = &g.node(layer.inputs.front());
    bool through_relu = false;
    if (src->kind == NodeKind::relu) {
        through_relu = true;
        src = &g.node(src->inputs.front());
    }
    if (!is_mac_layer(src->kind) || !src->has_param("bn_gamma") || !src->has_param("bn_beta")) return std::nullopt;
    const Tensor& gamma = src->param("bn_gamma");
    const Tensor& beta = src->param("bn_beta");
    std::vector<double> mean(static_cast<std::size_t>(gamma.size()));
    for (std::int64_t c = 0; c < gamma.size(); ++c)
        mean[c] = through_relu ? relu_normal_mean(beta[c], gamma[c]) : beta[c];
    return mean;
}

struct MeanAccumulator {
    std::vector<double> sums;
    std::int64_t rows = 0;

    void add(const Tensor& t) {
        const auto m = channel_means(t);
        if (sums.empty()) sums.assign(m.size(), 0.0);
        const auto n = t.dim(0);
        for (std::size_t c = 0; c < m.size(); ++c) sums[c] += m[c] * static_cast<double>(n);
        rows += n;
    }
    std::vector<double> mean() const {
        std::vector<double> out = sums;
        for (auto& v : out) v /= static_cast<double>(rows);
        return out;
    }
};

std::vector<Tensor> limit_samples(std::span<const Tensor> feed, std::int64_t limit) {
    std::vector<Tensor> out;
    std::int64_t seen = 0;
    for (const auto& batch : feed) {
        if (seen >= limit) break;
        const auto take = std::min(batch.dim(0), limit - seen);
        out.push_back(take == batch.dim(0) ? batch : slice_rows(batch, 0, take));
        seen += take;
    }
    return out;
}

}  // namespace

BiasCorrectionReport bias_correct(QuantSimModel& sim, std::span<const Tensor> feed,
                                  const BiasCorrectionOptions& options) {
    if (options.num_samples <= 0) throw UsageError("num_samples must be positive");
    if (options.mode == BiasCorrectionMode::empirical && feed.empty())
        throw DataError("empirical bias correction needs calibration data");
    sim.require_encodings();
    const auto batches = limit_samples(feed, options.num_samples);
    const auto inputs = sim.graph().input_names();
    if (inputs.size() != 1) throw UsageError("bias correction supports single-input models only");

    // Floating-point reference, taken before any bias moves.
    std::map<std::string, MeanAccumulator> fp;
    for (const auto& x : batches) {
        const auto values = run_graph(sim.graph(), {{inputs.front(), x}});
        for (const auto& n : sim.graph().nodes())
            if (is_mac_layer(n.kind)) fp[n.name].add(values.at(n.name));
    }

    BiasCorrectionReport report;
    std::vector<std::string> layers;
    for (auto idx : sim.graph().topo_order())
        if (is_mac_layer(sim.graph().nodes()[idx].kind)) layers.push_back(sim.graph().nodes()[idx].name);

    for (const auto& name : layers) {
        const Node& node = sim.graph().node(name);
        const Tensor& w = node.param("weight");
        std::vector<double> delta(static_cast<std::size_t>(w.dim(0)), 0.0);
        std::optional<std::vector<double>> ex;
        if (options.mode == BiasCorrectionMode::analytic_then_empirical) ex = analytic_input_mean(sim.graph(), node);
        const std::string wq = GraphModel::param_name(name, "weight");
        if (ex) {
            Tensor dw = w;
            if (sim.has_quantizer(wq) && sim.quantizer(wq).enabled) {
                const Tensor wq_t = qdq(w, sim.quantizer(wq).spec());
                for (std::int64_t i = 0; i < dw.size(); ++i) dw[i] = wq_t[i] - w[i];
            } else {
                dw = Tensor(w.shape());
            }
            const std::int64_t rs = row_size(w);
            const auto idx = input_channel_indices(node, static_cast<std::int64_t>(ex->size()));
            for (std::size_t c = 0; c < ex->size(); ++c)
                for (auto i : idx[c]) delta[i / rs] -= dw[i] * (*ex)[c];
            report.analytic_layers.push_back(name);
        } else if (!batches.empty()) {
            MeanAccumulator q;
            for (const auto& x : batches) {
                std::map<std::string, Tensor> pre;
                (void)sim.run(x, &pre);
                q.add(pre.at(name));
            }
            const auto fp_mean = fp.at(name).mean();
            const auto q_mean = q.mean();
            for (std::size_t c = 0; c < delta.size(); ++c) delta[c] = fp_mean[c] - q_mean[c];
            report.empirical_layers.push_back(name);
        } else {
            report.skipped_layers.push_back(name);
            continue;
        }
        Tensor b = bias_or_zeros(node);
        for (std::size_t c = 0; c < delta.size(); ++c) b[static_cast<std::int64_t>(c)] += delta[c];
        sim.set_param(name, "bias", b);
        report.corrections[name] = std::move(delta);
    }
    return report;
}

void AdaRoundParams::validate() const {
    if (num_batches <= 0) throw UsageError("adaround num_batches must be positive");
    if (num_iterations <= 0) throw UsageError("adaround num_iterations must be positive");
    if (!(reg_param >= 0.0)) throw UsageError("adaround reg_param must be non-negative");
    if (!(beta_range.second > 0.0 && beta_range.first >= beta_range.second))
        throw UsageError("adaround beta_range needs start >= end > 0");
    if (!(warm_start >= 0.0 && warm_start <= 1.0)) throw UsageError("adaround warm_start must lie in [0, 1]");
    if (!(learning_rate > 0.0)) throw UsageError("adaround learning_rate must be positive");
}

double rounding_loss(std::span<const double> residual, std::span<const double> gram, std::int64_t k) {
    double trace = 0.0;
    for (std::int64_t i = 0; i < k; ++i) trace += gram[i * k + i];
    const double norm = trace > 0.0 ? trace / static_cast<double>(k) : 1.0;
    const std::int64_t rows = static_cast<std::int64_t>(residual.size()) / k;
    double total = 0.0;
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* e = residual.data() + r * k;
        for (std::int64_t i = 0; i < k; ++i) {
            double gi = 0.0;
            for (std::int64_t j = 0; j < k; ++j) gi += gram[i * k + j] * e[j];
            total += e[i] * gi;
        }
    }
    return total / norm;
}

namespace {

// Per-group Gram matrices sum p p^T over every input patch the layer sees.
std::vector<std::vector<double>> layer_grams(const Node& layer, const Tensor& x) {
    const Tensor& w = layer.param("weight");
    if (layer.kind == NodeKind::linear) {
        const std::int64_t n = x.dim(0), k = w.dim(1);
        if (x.size() != n * k) throw DataError("input of '" + layer.name + "' does not match its weight");
        std::vector<double> g(static_cast<std::size_t>(k * k), 0.0);
        for (std::int64_t s = 0; s < n; ++s) {
            const double* p = x.values().data() + s * k;
            for (std::int64_t i = 0; i < k; ++i)
                for (std::int64_t j = 0; j < k; ++j) g[i * k + j] += p[i] * p[j];
        }
        return {g};
    }
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t groups = layer.attrs.groups, cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const auto [sh, sw] = layer.attrs.stride;
    const auto [ph, pw] = layer.attrs.padding;
    const std::int64_t ho = (h + 2 * ph - kh) / sh + 1, wo = (wd + 2 * pw - kw) / sw + 1;
    const std::int64_t k = cpg * kh * kw;
    std::vector<std::vector<double>> grams(static_cast<std::size_t>(groups),
                                           std::vector<double>(static_cast<std::size_t>(k * k), 0.0));
    std::vector<double> patch(static_cast<std::size_t>(k));
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t g = 0; g < groups; ++g)
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    std::int64_t t = 0;
                    for (std::int64_t ci = 0; ci < cpg; ++ci)
                        for (std::int64_t dy = 0; dy < kh; ++dy)
                            for (std::int64_t dx = 0; dx < kw; ++dx, ++t) {
                                const std::int64_t iy = oy * sh - ph + dy, ix = ox * sw - pw + dx;
                                patch[t] = (iy < 0 || iy >= h || ix < 0 || ix >= wd)
                                               ? 0.0
                                               : x[((s * c + g * cpg + ci) * h + iy) * wd + ix];
                            }
                    auto& gm = grams[g];
                    for (std::int64_t i = 0; i < k; ++i) {
                        if (patch[i] == 0.0) continue;
                        for (std::int64_t j = 0; j < k; ++j) gm[i * k + j] += patch[i] * patch[j];
                    }
                }
    return grams;
}

double soft_h(double v) { return std::clamp(1.2 / (1.0 + std::exp(-v)) - 0.1, 0.0, 1.0); }

struct RowGrid {
    double scale;
    std::int64_t zero_point, lo, hi;
};

}  // namespace

AdaRoundReport adaround_sim(QuantSimModel& sim, std::span<const Tensor> feed, const AdaRoundParams& params) {
    params.validate();
    if (feed.empty()) throw DataError("adaround needs calibration data");
    if (static_cast<std::int64_t>(feed.size()) < params.num_batches)
        throw DataError("adaround needs " + std::to_string(params.num_batches) + " batches, got " +
                        std::to_string(feed.size()));
    const auto inputs = sim.graph().input_names();
    if (inputs.size() != 1) throw UsageError("adaround supports single-input models only");
    const auto batches = feed.first(static_cast<std::size_t>(params.num_batches));

    std::vector<std::string> layers;
    for (auto idx : sim.graph().topo_order()) {
        const Node& n = sim.graph().nodes()[idx];
        const auto wq = GraphModel::param_name(n.name, "weight");
        if (is_mac_layer(n.kind) && sim.has_quantizer(wq) && sim.quantizer(wq).enabled) layers.push_back(n.name);
    }

    AdaRoundReport report;
    for (const auto& name : layers) {
        const std::string wq_name = GraphModel::param_name(name, "weight");
        auto& wq = sim.quantizer(wq_name);
        if (!wq.has_encoding()) sim.recompute_encoding(wq_name);
        const Node& node = sim.graph().node(name);
        const Tensor w = node.param("weight");
        const std::int64_t rows = w.dim(0), k = row_size(w);
        const std::int64_t groups = node.kind == NodeKind::conv2d ? node.attrs.groups : 1;
        const std::int64_t rows_per_group = rows / groups;

        // Gram matrices of this layer's inputs under the already rounded prefix.
        std::vector<std::vector<std::vector<double>>> grams;  // [batch][group]
        std::vector<double> patches;                          // input vectors per batch and group
        for (const auto& x : batches) {
            const auto values = run_graph(sim.graph(), {{inputs.front(), x}});
            const Tensor& in = values.at(node.inputs.front());
            grams.push_back(layer_grams(node, in));
            const auto out_shape = infer_shapes(sim.graph(), in.dim(0)).at(name);
            patches.push_back(static_cast<double>(numel(out_shape) / out_shape[1]));
        }
        std::vector<std::vector<double>> total(static_cast<std::size_t>(groups),
                                               std::vector<double>(static_cast<std::size_t>(k * k), 0.0));
        for (const auto& b : grams)
            for (std::int64_t g = 0; g < groups; ++g)
                for (std::size_t i = 0; i < total[g].size(); ++i) total[g][i] += b[g][i];

        std::vector<RowGrid> grid(static_cast<std::size_t>(rows));
        for (std::int64_t r = 0; r < rows; ++r) {
            const auto& e = wq.encodings.size() == 1 ? wq.encodings.front() : wq.encodings[r];
            grid[r] = {e.scale, e.zero_point, e.int_min(), e.int_max()};
        }
        // Grid-unit weights, their floors and which elements the clamp pins.
        std::vector<double> wg(static_cast<std::size_t>(w.size())), base(wg.size()), near(wg.size());
        std::vector<char> movable(wg.size());
        for (std::int64_t i = 0; i < w.size(); ++i) {
            const auto& gr = grid[i / k];
            wg[i] = w[i] / gr.scale;
            base[i] = std::floor(wg[i]);
            const double fz = base[i] + static_cast<double>(gr.zero_point);
            movable[i] = fz >= static_cast<double>(gr.lo) && fz + 1.0 <= static_cast<double>(gr.hi);
            near[i] = round_half_away(wg[i]) - base[i];
        }
        auto residual = [&](const std::vector<double>& h) {
            std::vector<double> e(wg.size());
            for (std::size_t i = 0; i < wg.size(); ++i) {
                const auto& gr = grid[i / static_cast<std::size_t>(k)];
                const double q = std::clamp(base[i] + h[i] + static_cast<double>(gr.zero_point),
                                            static_cast<double>(gr.lo), static_cast<double>(gr.hi));
                e[i] = q - static_cast<double>(gr.zero_point) - wg[i];
            }
            return e;
        };
        auto total_loss = [&](const std::vector<double>& h) {
            const auto e = residual(h);
            double loss = 0.0;
            for (std::int64_t g = 0; g < groups; ++g)
                loss += rounding_loss(std::span(e).subspan(g * rows_per_group * k, rows_per_group * k), total[g], k);
            return loss;
        };

        std::vector<double> v(wg.size());
        for (std::size_t i = 0; i < wg.size(); ++i) {
            const double rest = wg[i] - base[i];
            const double p = std::clamp((rest + 0.1) / 1.2, 1e-6, 1.0 - 1e-6);
            v[i] = std::log(p / (1.0 - p));
        }
        // The objective is the output error in real units plus reg_param times
        // the rounding regularizer, divided by s^2 E[x^2] per row: the
        // reconstruction term is then in grid units and the fixed step does
        // not depend on the scale of weights or inputs.
        std::vector<std::vector<double>> norms(grams.size(), std::vector<double>(static_cast<std::size_t>(groups)));
        std::vector<std::vector<double>> power(grams.size(), std::vector<double>(static_cast<std::size_t>(groups)));
        for (std::size_t b = 0; b < grams.size(); ++b)
            for (std::int64_t g = 0; g < groups; ++g) {
                double tr = 0.0;
                for (std::int64_t i = 0; i < k; ++i) tr += grams[b][g][i * k + i];
                norms[b][g] = tr > 0.0 ? tr / static_cast<double>(k) : 1.0;
                power[b][g] = tr > 0.0 ? norms[b][g] / patches[b] : 1.0;
            }

        const int iters = params.num_iterations;
        const int warm = static_cast<int>(params.warm_start * iters);
        const auto [beta_hi, beta_lo] = params.beta_range;
        std::vector<double> h(wg.size()), e(wg.size()), ge(static_cast<std::size_t>(k));
        for (int t = 0; t < iters; ++t) {
            const std::size_t b = static_cast<std::size_t>(t) % grams.size();
            const bool reg = t >= warm && params.reg_param > 0.0;
            double beta = beta_hi;
            if (reg && iters > warm) {
                const double progress = static_cast<double>(t - warm) / static_cast<double>(iters - warm);
                beta = beta_lo + 0.5 * (beta_hi - beta_lo) * (1.0 + std::cos(std::numbers::pi * progress));
            }
            for (std::size_t i = 0; i < v.size(); ++i) h[i] = soft_h(v[i]);
            e = residual(h);
            double loss = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) {
                const auto& gm = grams[b][r / rows_per_group];
                const double norm = norms[b][r / rows_per_group];
                const double lambda =
                    params.reg_param / (grid[r].scale * grid[r].scale * power[b][r / rows_per_group]);
                const double* er = e.data() + r * k;
                for (std::int64_t i = 0; i < k; ++i) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < k; ++j) acc += gm[i * k + j] * er[j];
                    ge[i] = acc;
                    loss += er[i] * acc / norm;
                }
                for (std::int64_t i = 0; i < k; ++i) {
                    const std::size_t at = static_cast<std::size_t>(r * k + i);
                    if (!movable[at]) continue;
                    double grad = 2.0 * ge[i] / norm;
                    const double d = 2.0 * h[at] - 1.0;
                    if (reg) {
                        const double ad = std::abs(d);
                        loss += lambda * (1.0 - std::pow(ad, beta));
                        if (ad > 0.0) grad -= lambda * beta * std::pow(ad, beta - 1.0) * (d > 0 ? 2.0 : -2.0);
                    }
                    const double sig = 1.0 / (1.0 + std::exp(-v[at]));
                    const double raw = 1.2 * sig - 0.1;
                    if (raw <= 0.0 || raw >= 1.0) continue;
                    v[at] -= params.learning_rate * grad * 1.2 * sig * (1.0 - sig);
                }
            }
            if (!std::isfinite(loss)) throw NumericError("adaround loss of '" + name + "' is not finite");
        }

        std::vector<double> hard(wg.size());
        for (std::size_t i = 0; i < v.size(); ++i) hard[i] = soft_h(v[i]) >= 0.5 ? 1.0 : 0.0;
        AdaRoundLayerReport lr;
        lr.layer = name;
        lr.loss_nearest = total_loss(near);
        lr.loss_adaround = total_loss(hard);
        if (!std::isfinite(lr.loss_adaround)) throw NumericError("adaround loss of '" + name + "' is not finite");
        if (lr.loss_adaround > lr.loss_nearest) {
            hard = near;
            lr.loss_adaround = lr.loss_nearest;
            lr.fell_back_to_nearest = true;
        }
        Tensor rounded(w.shape());
        const auto er = residual(hard);
        for (std::size_t i = 0; i < wg.size(); ++i) {
            if (movable[i] && hard[i] != near[i]) ++lr.flipped;
            const auto& gr = grid[i / static_cast<std::size_t>(k)];
            rounded[static_cast<std::int64_t>(i)] = (wg[i] + er[i]) * gr.scale;
        }
        sim.set_param(name, "weight", rounded);
        wq.frozen = true;
        report.layers.push_back(lr);
    }
    report.encodings = sim.encodings_json(false);
    report.encodings["activation_encodings"] = nlohmann::json::object();
    return report;
}

std::pair<GraphModel, AdaRoundReport> adaround(const GraphModel& model, std::span<const Tensor> feed,
                                               const AdaRoundParams& params, int param_bw, RangeKind scheme,
                                               const SimConfig& config) {
    QuantSimModel sim = create_quantsim(model, param_bw, 8, scheme, config);
    sim.compute_param_encodings();
    auto report = adaround_sim(sim, feed, params);
    return {sim.graph(), std::move(report)};
}

PtqResult run_ptq_pipeline(const GraphModel& model, std::span<const Tensor> feed, const PtqOptions& options) {
    if (feed.empty()) throw DataError("the PTQ pipeline needs calibration data");
    CLEReport cle;
    std::vector<std::string> steps;
    GraphModel g = model;
    if (options.use_cle) {
        std::tie(g, cle) = equalize_model(model);
        steps.push_back("fold_batch_norms");
        steps.push_back("cross_layer_equalization");
    } else if (options.fold_batch_norms) {
        g = fold_batch_norms(model, &cle.fold);
        steps.push_back("fold_batch_norms");
    }

    QuantSimOptions so;
    so.default_param_bw = options.param_bw;
    so.default_output_bw = options.output_bw;
    so.param_scheme = options.param_scheme;
    so.activation_scheme = options.activation_scheme;
    PtqResult result{QuantSimModel(std::move(g), so, options.config), std::move(cle), std::nullopt, std::nullopt, {}};
    steps.push_back("add_quantizers");
    result.sim.compute_param_encodings();
    steps.push_back("weight_range_setting");

    if (options.use_adaround) {
        AdaRoundParams ap = options.adaround;
        ap.num_batches = std::min<std::int64_t>(ap.num_batches, static_cast<std::int64_t>(feed.size()));
        result.adaround = adaround_sim(result.sim, feed, ap);
        steps.push_back("adaround");
    } else if (options.use_bias_correction) {
        result.sim.compute_encodings(feed);
        result.bias_correction = bias_correct(result.sim, feed, options.bias_correction);
        steps.push_back("bias_correction");
    }
    result.sim.compute_encodings(feed);
    steps.push_back("activation_range_setting");
    result.steps = std::move(steps);
    return result;
}

}  // namespace fixquant
