// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/qat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "fixquant/error.hpp"
#include "fixquant/kernels.hpp"

namespace fixquant {

Tensor qdq_backward(const Tensor& upstream, const Tensor& x, const QuantEncoding& e) {
    if (upstream.shape() != x.shape()) throw DataError("qdq_backward: gradient and input shapes differ");
    Tensor g = upstream;
    const double lo = e.grid_min(), hi = e.grid_max();
    for (std::int64_t i = 0; i < x.size(); ++i)
        if (!(x[i] >= lo && x[i] <= hi)) g[i] = 0.0;
    return g;
}

Tensor qdq_backward(const Tensor& upstream, const Tensor& x, const QuantizerSpec& spec) {
    if (!spec.enabled) return upstream;
    if (!spec.per_channel()) return qdq_backward(upstream, x, spec.encodings.front());
    if (upstream.shape() != x.shape()) throw DataError("qdq_backward: gradient and input shapes differ");
    const auto layout = channel_layout(x.shape(), *spec.channel_axis);
    if (static_cast<std::int64_t>(spec.encodings.size()) != layout.channels)
        throw DataError("qdq_backward: encoding count does not match channels");
    Tensor g = upstream;
    for (std::int64_t o = 0; o < layout.outer; ++o)
        for (std::int64_t c = 0; c < layout.channels; ++c) {
            const double lo = spec.encodings[c].grid_min(), hi = spec.encodings[c].grid_max();
            for (std::int64_t i = 0; i < layout.inner; ++i) {
                const auto at = (o * layout.channels + c) * layout.inner + i;
                if (!(x[at] >= lo && x[at] <= hi)) g[at] = 0.0;
            }
        }
    return g;
}

const Tensor& GradTape::output() const {
    const auto outs = graph->output_names();
    if (outs.size() != 1) throw UsageError("the model must have exactly one output");
    return values.at(outs.front());
}

namespace {

void check_input(const Node& node, const Tensor& x) {
    Shape expected{x.rank() > 0 ? x.dim(0) : 0};
    expected.insert(expected.end(), node.attrs.shape.begin(), node.attrs.shape.end());
    if (x.shape() != expected)
        throw DataError("input '" + node.name + "' expects per-sample shape " + shape_to_string(node.attrs.shape) +
                        ", got " + shape_to_string(x.shape()));
}

GradTape record(const GraphModel& graph, const Tensor& x, const QuantSimModel* sim) {
    const auto inputs = graph.input_names();
    if (inputs.size() != 1) throw UsageError("training supports single-input models only");
    GradTape tape;
    tape.graph = &graph;
    auto enabled = [&](const std::string& name) -> const TensorQuantizer* {
        if (sim == nullptr || !sim->has_quantizer(name)) return nullptr;
        const auto& q = sim->quantizer(name);
        if (!q.enabled) return nullptr;
        if (!q.has_encoding()) throw UsageError("quantizer '" + name + "' has no encoding; run compute_encodings");
        return &q;
    };
    for (auto idx : graph.topo_order()) {
        const Node& node = graph.nodes()[idx];
        GradTape::Step step;
        step.node = idx;
        if (node.kind == NodeKind::input) {
            check_input(node, x);
            step.inputs.push_back(x);
        } else {
            for (const auto& in : node.inputs) step.inputs.push_back(tape.values.at(in));
        }
        for (const auto& [role, value] : node.params) {
            step.raw_params[role] = value;
            const auto* q = is_quantizable_param(role) ? enabled(GraphModel::param_name(node.name, role)) : nullptr;
            if (q != nullptr) {
                step.param_quantizers[role] = q->spec();
                step.params[role] = qdq(value, q->spec());
            } else {
                step.params[role] = value;
            }
        }
        ForwardHooks use;
        use.param = [&](const Node&, const std::string& role, const Tensor&) { return step.params.at(role); };
        step.pre = evaluate_node(node, step.inputs, &use);
        Tensor post = step.pre;
        if (sim != nullptr) {
            if (const auto qname = sim->output_quantizer_for(node.name)) {
                if (const auto* q = enabled(*qname)) {
                    step.output_quantizer = q->spec();
                    post = qdq(step.pre, *step.output_quantizer);
                }
            }
        }
        tape.values[node.name] = std::move(post);
        tape.steps.push_back(std::move(step));
    }
    return tape;
}

void accumulate(Tensor& into, const Tensor& g) {
    if (into.empty()) {
        into = g;
        return;
    }
    for (std::int64_t i = 0; i < g.size(); ++i) into[i] += g[i];
}

struct LayerGrads {
    std::vector<Tensor> inputs;
    Tensor weight, bias;
};

LayerGrads linear_backward(const Tensor& x, const Tensor& w, bool has_bias, const Tensor& dy) {
    const std::int64_t n = x.dim(0), in = w.dim(1), out = w.dim(0);
    LayerGrads g;
    Tensor dx(x.shape());
    g.weight = Tensor(w.shape());
    if (has_bias) g.bias = Tensor({out});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t o = 0; o < out; ++o) {
            const double d = dy[s * out + o];
            if (has_bias) g.bias[o] += d;
            if (d == 0.0) continue;
            for (std::int64_t i = 0; i < in; ++i) {
                g.weight[o * in + i] += d * x[s * in + i];
                dx[s * in + i] += d * w[o * in + i];
            }
        }
    g.inputs.push_back(std::move(dx));
    return g;
}

LayerGrads conv_backward(const Node& node, const Tensor& x, const Tensor& w, bool has_bias, const Tensor& dy) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t o_ch = w.dim(0), cpg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    const std::int64_t groups = node.attrs.groups, opg = o_ch / groups;
    const std::int64_t ho = dy.dim(2), wo = dy.dim(3);
    const auto [sh, sw] = node.attrs.stride;
    const auto [ph, pw] = node.attrs.padding;
    LayerGrads g;
    Tensor dx(x.shape());
    g.weight = Tensor(w.shape());
    if (has_bias) g.bias = Tensor({o_ch});
    for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t o = 0; o < o_ch; ++o) {
            const std::int64_t grp = o / opg;
            for (std::int64_t oy = 0; oy < ho; ++oy)
                for (std::int64_t ox = 0; ox < wo; ++ox) {
                    const double d = dy[((s * o_ch + o) * ho + oy) * wo + ox];
                    if (has_bias) g.bias[o] += d;
                    if (d == 0.0) continue;
                    for (std::int64_t ci = 0; ci < cpg; ++ci) {
                        const std::int64_t ch = grp * cpg + ci;
                        for (std::int64_t ky = 0; ky < kh; ++ky) {
                            const std::int64_t iy = oy * sh - ph + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                const std::int64_t ix = ox * sw - pw + kx;
                                if (ix < 0 || ix >= wd) continue;
                                const auto xi = ((s * c + ch) * h + iy) * wd + ix;
                                const auto wi = ((o * cpg + ci) * kh + ky) * kw + kx;
                                g.weight[wi] += d * x[xi];
                                dx[xi] += d * w[wi];
                            }
                        }
                    }
                }
        }
    g.inputs.push_back(std::move(dx));
    return g;
}

Tensor pool_backward(const Node& node, const Tensor& x, const Tensor& dy, bool max) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t ho = dy.dim(2), wo = dy.dim(3);
    const auto [kh, kw] = node.attrs.kernel;
    const auto [sh, sw] = node.attrs.stride;
    const double inv = 1.0 / (kh * kw);
    Tensor dx(x.shape());
    for (std::int64_t p = 0; p < n * c; ++p) {
        const std::int64_t base = p * h * wd;
        for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                const double d = dy[(p * ho + oy) * wo + ox];
                if (max) {
                    // The first maximum in window order receives the gradient.
                    std::int64_t best = base + oy * sh * wd + ox * sw;
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) {
                            const auto at = base + (oy * sh + ky) * wd + ox * sw + kx;
                            if (x[at] > x[best]) best = at;
                        }
                    dx[best] += d;
                } else {
                    for (int ky = 0; ky < kh; ++ky)
                        for (int kx = 0; kx < kw; ++kx) dx[base + (oy * sh + ky) * wd + ox * sw + kx] += d * inv;
                }
            }
    }
    return dx;
}

std::vector<Tensor> concat_backward(const std::vector<Tensor>& inputs, const Tensor& dy, int axis) {
    const int rank = dy.rank();
    if (axis < 0) axis += rank;
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= dy.dim(d);
    for (int d = axis + 1; d < rank; ++d) inner *= dy.dim(d);
    std::vector<Tensor> out;
    for (const auto& t : inputs) out.emplace_back(t.shape());
    std::int64_t pos = 0;
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            const auto chunk = inputs[k].dim(axis) * inner;
            for (std::int64_t i = 0; i < chunk; ++i) out[k][o * chunk + i] = dy[pos + i];
            pos += chunk;
        }
    return out;
}

}  // namespace

GradTape record_forward(const GraphModel& graph, const Tensor& x) { return record(graph, x, nullptr); }

GradTape record_forward(const QuantSimModel& sim, const Tensor& x) { return record(sim.graph(), x, &sim); }

std::map<std::string, Tensor> backward(const GradTape& tape, const Tensor& output_grad) {
    const GraphModel& graph = *tape.graph;
    const auto outs = graph.output_names();
    if (outs.size() != 1) throw UsageError("the model must have exactly one output");
    if (output_grad.shape() != tape.values.at(outs.front()).shape())
        throw DataError("output gradient shape " + shape_to_string(output_grad.shape()) + " does not match output " +
                        shape_to_string(tape.values.at(outs.front()).shape()));

    std::map<std::string, Tensor> grad_of;  // gradient w.r.t. each node's post-quant value
    grad_of[outs.front()] = output_grad;
    std::map<std::string, Tensor> param_grads;

    for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
        const auto& step = *it;
        const Node& node = graph.nodes()[step.node];
        auto found = grad_of.find(node.name);
        // Nodes the output does not depend on receive no gradient at all.
        if (found == grad_of.end()) continue;
        Tensor dpost = std::move(found->second);
        const Tensor dy = step.output_quantizer ? qdq_backward(dpost, step.pre, *step.output_quantizer) : dpost;

        std::vector<Tensor> dins;
        switch (node.kind) {
            case NodeKind::input:
                break;
            case NodeKind::output:
                dins.push_back(dy);
                break;
            case NodeKind::linear:
            case NodeKind::conv2d: {
                const bool has_bias = step.params.count("bias") != 0;
                auto g = node.kind == NodeKind::linear
                             ? linear_backward(step.inputs[0], step.params.at("weight"), has_bias, dy)
                             : conv_backward(node, step.inputs[0], step.params.at("weight"), has_bias, dy);
                auto store = [&](const std::string& role, const Tensor& gq) {
                    auto q = step.param_quantizers.find(role);
                    param_grads[GraphModel::param_name(node.name, role)] =
                        q == step.param_quantizers.end() ? gq
                                                         : qdq_backward(gq, step.raw_params.at(role), q->second);
                };
                store("weight", g.weight);
                if (has_bias) store("bias", g.bias);
                dins = std::move(g.inputs);
                break;
            }
            case NodeKind::batchnorm: {
                Tensor dx = dy;
                const auto layout = channel_layout(dx.shape(), 1);
                for (std::int64_t o = 0; o < layout.outer; ++o)
                    for (std::int64_t c = 0; c < layout.channels; ++c) {
                        const double k = step.params.at("gamma")[c] /
                                         std::sqrt(step.params.at("running_var")[c] + node.attrs.eps);
                        for (std::int64_t i = 0; i < layout.inner; ++i)
                            dx[(o * layout.channels + c) * layout.inner + i] *= k;
                    }
                dins.push_back(std::move(dx));
                break;
            }
            case NodeKind::relu:
            case NodeKind::relu6: {
                Tensor dx = dy;
                const Tensor& x = step.inputs[0];
                const double top = node.kind == NodeKind::relu6 ? 6.0 : std::numeric_limits<double>::infinity();
                for (std::int64_t i = 0; i < dx.size(); ++i)
                    if (!(x[i] > 0.0 && x[i] < top)) dx[i] = 0.0;
                dins.push_back(std::move(dx));
                break;
            }
            case NodeKind::add:
                dins = {dy, dy};
                break;
            case NodeKind::concat:
                dins = concat_backward(step.inputs, dy, node.attrs.axis);
                break;
            case NodeKind::maxpool:
            case NodeKind::avgpool:
                dins.push_back(pool_backward(node, step.inputs[0], dy, node.kind == NodeKind::maxpool));
                break;
        }
        for (std::size_t k = 0; k < dins.size(); ++k) accumulate(grad_of[node.inputs[k]], dins[k]);
    }

    for (const auto& node : graph.nodes()) {
        if (!is_mac_layer(node.kind)) continue;
        for (const auto* role : {"weight", "bias"}) {
            if (!node.has_param(role)) continue;
            const auto name = GraphModel::param_name(node.name, role);
            if (param_grads.count(name) == 0) throw DataError("parameter '" + name + "' is not connected to the output");
        }
    }
    return param_grads;
}

LossResult softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
    if (logits.rank() != 2 || targets.size() != logits.dim(0))
        throw DataError("cross-entropy expects [N, C] logits and N class indices");
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    LossResult r{0.0, Tensor(logits.shape())};
    for (std::int64_t s = 0; s < n; ++s) {
        const auto label = static_cast<std::int64_t>(targets[s]);
        if (label < 0 || label >= k || static_cast<double>(label) != targets[s])
            throw DataError("class index " + std::to_string(targets[s]) + " out of range");
        double top = logits[s * k];
        for (std::int64_t c = 1; c < k; ++c) top = std::max(top, logits[s * k + c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < k; ++c) z += std::exp(logits[s * k + c] - top);
        r.loss += std::log(z) + top - logits[s * k + label];
        for (std::int64_t c = 0; c < k; ++c) {
            const double p = std::exp(logits[s * k + c] - top) / z;
            r.grad[s * k + c] = (p - (c == label ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    r.loss /= static_cast<double>(n);
    return r;
}

LossResult mse_loss(const Tensor& outputs, const Tensor& targets) {
    if (outputs.size() != targets.size()) throw DataError("MSE operands differ in size");
    LossResult r{0.0, Tensor(outputs.shape())};
    const double m = static_cast<double>(outputs.size());
    for (std::int64_t i = 0; i < outputs.size(); ++i) {
        const double d = outputs[i] - targets[i];
        r.loss += d * d / m;
        r.grad[i] = 2.0 * d / m;
    }
    return r;
}

LossResult task_loss(const Tensor& outputs, const Tensor& targets, Task task) {
    return task == Task::classification ? softmax_cross_entropy(outputs, targets) : mse_loss(outputs, targets);
}

void QatOptions::validate() const {
    if (epochs < 0) throw UsageError("epochs must be non-negative");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning rate must be >= 0");
    if (lr_step_epochs <= 0) throw UsageError("lr_step_epochs must be positive");
    if (!(lr_decay > 0.0)) throw UsageError("lr_decay must be positive");
    if (batch_size <= 0) throw UsageError("batch size must be positive");
}

double scheduled_lr(const QatOptions& options, int epoch) {
    return options.learning_rate * std::pow(options.lr_decay, epoch / options.lr_step_epochs);
}

std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, int epoch, bool shuffle) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    if (!shuffle) return order;
    std::seed_seq seq{seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    // Fisher-Yates with an explicit draw, independent of the standard library.
    for (std::int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[i], order[j]);
    }
    return order;
}

namespace {

// Shared SGD loop; `model_fwd` records a pass, `params` exposes the model
// being trained and `after_step` / `after_epoch` refresh encodings.
template <typename Record, typename Graph, typename SetParam, typename AfterStep, typename AfterEpoch, typename Eval>
QatReport sgd_loop(const Dataset& train, const QatOptions& options, Record record, Graph graph, SetParam set_param,
                   AfterStep after_step, AfterEpoch after_epoch, Eval eval) {
    options.validate();
    if (train.size() == 0) throw DataError("training set is empty");
    QatReport report;
    std::ofstream log;
    if (options.log_csv) {
        log.open(*options.log_csv);
        if (!log) throw DataError("cannot write " + options.log_csv->string());
        log << "epoch,lr,loss,metric\n";
    }
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const double lr = scheduled_lr(options, epoch);
        const auto order = epoch_order(train.size(), options.seed, epoch, options.shuffle);
        double loss_sum = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t b = 0; b < train.size(); b += options.batch_size) {
            const auto count = std::min(options.batch_size, train.size() - b);
            const std::span<const std::int64_t> rows(order.data() + b, static_cast<std::size_t>(count));
            const Tensor x = gather_rows(train.inputs, rows);
            const Tensor t = gather_rows(train.targets, rows);
            const GradTape tape = record(x);
            const auto loss = task_loss(tape.output(), t, train.task);
            if (!std::isfinite(loss.loss)) {
                std::ostringstream msg;
                msg << "training diverged: non-finite loss at epoch " << epoch + 1 << ", batch "
                    << b / options.batch_size + 1;
                throw NumericError(msg.str());
            }
            loss_sum += loss.loss * static_cast<double>(count);
            seen += count;
            const auto grads = backward(tape, loss.grad);
            if (lr != 0.0) {
                for (const auto& [name, g] : grads) {
                    const auto dot = name.rfind('.');
                    const std::string node = name.substr(0, dot), role = name.substr(dot + 1);
                    Tensor p = graph().node(node).param(role);
                    for (std::int64_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
                    if (!p.all_finite()) throw NumericError("training diverged: non-finite parameter " + name);
                    set_param(node, role, p);
                }
                after_step();
            }
        }
        after_epoch();
        QatEpoch e{epoch + 1, lr, loss_sum / static_cast<double>(seen), eval()};
        report.epochs.push_back(e);
        if (log) log << e.epoch << ',' << e.learning_rate << ',' << e.loss << ',' << e.metric << '\n';
    }
    return report;
}

template <typename Forward>
std::pair<double, double> evaluate_with(Forward fwd, const Dataset& data, std::int64_t batch_size) {
    if (data.size() == 0) throw DataError("evaluation set is empty");
    double loss = 0.0, metric = 0.0;
    for (std::int64_t b = 0; b < data.size(); b += batch_size) {
        const auto count = std::min(batch_size, data.size() - b);
        const Tensor y = fwd(slice_rows(data.inputs, b, count));
        const Tensor t = slice_rows(data.targets, b, count);
        loss += task_loss(y, t, data.task).loss * static_cast<double>(count);
        metric += score(y, t, data.task) * static_cast<double>(count);
    }
    const double n = static_cast<double>(data.size());
    return {loss / n, metric / n};
}

}  // namespace

std::pair<double, double> evaluate(const QuantSimModel& sim, const Dataset& data, std::int64_t batch_size) {
    return evaluate_with([&](const Tensor& x) { return sim.forward(x); }, data, batch_size);
}

std::pair<double, double> evaluate(const GraphModel& model, const Dataset& data, std::int64_t batch_size) {
    return evaluate_with([&](const Tensor& x) { return forward(model, x); }, data, batch_size);
}

QatReport qat_train(QuantSimModel& sim, const Dataset& train, const QatOptions& options, const Dataset* eval) {
    sim.require_encodings();
    const Dataset& scored = eval != nullptr ? *eval : train;
    const auto batches = make_batches(train.inputs, 256);
    return sgd_loop(
        train, options, [&](const Tensor& x) { return record_forward(sim, x); },
        [&]() -> const GraphModel& { return sim.graph(); },
        [&](const std::string& node, const std::string& role, const Tensor& p) { sim.set_param(node, role, p); },
        [&] {
            if (options.refresh_param_encodings) sim.compute_param_encodings();
        },
        [&] {
            if (options.refresh_activation_ranges) sim.compute_encodings(batches);
        },
        [&] { return evaluate(sim, scored).second; });
}

QatReport fp32_train(GraphModel& model, const Dataset& train, const QatOptions& options, const Dataset* eval) {
    const Dataset& scored = eval != nullptr ? *eval : train;
    return sgd_loop(
        train, options, [&](const Tensor& x) { return record_forward(model, x); },
        [&]() -> const GraphModel& { return model; },
        [&](const std::string& node, const std::string& role, const Tensor& p) { model.set_param(node, role, p); },
        [] {}, [] {}, [&] { return evaluate(model, scored).second; });
}

}  // namespace fixquant
