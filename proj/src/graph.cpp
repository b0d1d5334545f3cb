// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/graph.hpp"

#include <algorithm>
#include <set>

#include "fixquant/error.hpp"

namespace fixquant {

namespace {

constexpr std::pair<NodeKind, std::string_view> kKindNames[] = {
    {NodeKind::input, "input"},       {NodeKind::output, "output"},   {NodeKind::linear, "linear"},
    {NodeKind::conv2d, "conv2d"},     {NodeKind::batchnorm, "batchnorm"}, {NodeKind::relu, "relu"},
    {NodeKind::relu6, "relu6"},       {NodeKind::add, "add"},         {NodeKind::concat, "concat"},
    {NodeKind::maxpool, "maxpool"},   {NodeKind::avgpool, "avgpool"},
};

kernels::Conv2dParams conv_params(const NodeAttrs& a) { return {a.stride, a.padding, a.groups}; }
kernels::Pool2dParams pool_params(const NodeAttrs& a) { return {a.kernel, a.stride}; }

std::vector<std::string> required_params(NodeKind kind) {
    switch (kind) {
        case NodeKind::linear:
        case NodeKind::conv2d:
            return {"weight"};
        case NodeKind::batchnorm:
            return {"gamma", "beta", "running_mean", "running_var"};
        default:
            return {};
    }
}

void check_arity(const Node& n) {
    const auto k = n.inputs.size();
    bool ok = true;
    switch (n.kind) {
        case NodeKind::input: ok = k == 0; break;
        case NodeKind::add: ok = k == 2; break;
        case NodeKind::concat: ok = k >= 2; break;
        default: ok = k == 1; break;
    }
    if (!ok) {
        throw DataError("node '" + n.name + "' of kind " + std::string(to_string(n.kind)) + " has " +
                        std::to_string(k) + " inputs");
    }
}

}  // namespace

std::string_view to_string(NodeKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "unknown";
}

NodeKind parse_node_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw DataError("unsupported node kind '" + std::string(name) + "'");
}

bool is_mac_layer(NodeKind kind) { return kind == NodeKind::linear || kind == NodeKind::conv2d; }

bool has_weights(NodeKind kind) { return is_mac_layer(kind) || kind == NodeKind::batchnorm; }

const Tensor& Node::param(const std::string& role) const {
    auto it = params.find(role);
    if (it == params.end()) throw DataError("node '" + name + "' has no parameter '" + role + "'");
    return it->second;
}

void GraphModel::add_node(Node node) {
    if (node.name.empty()) throw DataError("node name must not be empty");
    if (contains(node.name)) throw DataError("duplicate node name '" + node.name + "'");
    for (auto& [role, t] : node.params) t = t.rounded_to_float();
    nodes_.push_back(std::move(node));
}

const Node* GraphModel::find(std::string_view name) const {
    for (const auto& n : nodes_)
        if (n.name == name) return &n;
    return nullptr;
}

const Node& GraphModel::node(std::string_view name) const {
    const Node* n = find(name);
    if (n == nullptr) throw DataError("unknown node '" + std::string(name) + "'");
    return *n;
}

Node& GraphModel::mutable_node(std::string_view name) { return const_cast<Node&>(node(name)); }

void GraphModel::set_param(std::string_view node_name, const std::string& role, const Tensor& value) {
    auto& n = mutable_node(node_name);
    auto it = n.params.find(role);
    if (it != n.params.end() && it->second.shape() != value.shape()) {
        throw DataError("parameter " + param_name(node_name, role) + " changes shape from " +
                        shape_to_string(it->second.shape()) + " to " + shape_to_string(value.shape()));
    }
    require_finite(value, param_name(node_name, role));
    n.params[role] = value.rounded_to_float();
}

void GraphModel::erase_param(std::string_view node_name, const std::string& role) {
    mutable_node(node_name).params.erase(role);
}

void GraphModel::set_kind(std::string_view node_name, NodeKind kind) { mutable_node(node_name).kind = kind; }

void GraphModel::bypass_node(std::string_view name) {
    const auto& n = node(name);
    if (n.inputs.size() != 1) throw DataError("cannot bypass node '" + n.name + "' with several inputs");
    const std::string source = n.inputs.front();
    const std::string removed = n.name;
    for (auto& other : nodes_)
        for (auto& in : other.inputs)
            if (in == removed) in = source;
    std::erase_if(nodes_, [&](const Node& x) { return x.name == removed; });
}

std::string GraphModel::param_name(std::string_view node, std::string_view role) {
    return std::string(node) + "." + std::string(role);
}

std::vector<std::size_t> GraphModel::topo_order() const {
    const auto n = nodes_.size();
    std::vector<std::vector<std::size_t>> deps(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& in : nodes_[i].inputs) {
            std::size_t j = 0;
            while (j < n && nodes_[j].name != in) ++j;
            if (j == n) throw DataError("node '" + nodes_[i].name + "' references missing node '" + in + "'");
            deps[i].push_back(j);
        }
    }
    std::vector<bool> done(n, false);
    std::vector<std::size_t> order;
    order.reserve(n);
    while (order.size() < n) {
        bool progressed = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (done[i]) continue;
            if (std::all_of(deps[i].begin(), deps[i].end(), [&](std::size_t d) { return done[d]; })) {
                done[i] = true;
                order.push_back(i);
                progressed = true;
                break;
            }
        }
        if (!progressed) throw DataError("graph contains a cycle");
    }
    return order;
}

void GraphModel::validate() const {
    std::set<std::string> names;
    for (const auto& n : nodes_) {
        if (!names.insert(n.name).second) throw DataError("duplicate node name '" + n.name + "'");
    }
    bool has_input = false, has_output = false;
    for (const auto& n : nodes_) {
        check_arity(n);
        has_input |= n.kind == NodeKind::input;
        has_output |= n.kind == NodeKind::output;
        if (n.kind == NodeKind::input && n.attrs.shape.empty()) {
            throw DataError("input node '" + n.name + "' needs a per-sample shape");
        }
        const auto req = required_params(n.kind);
        if (req.empty() && !n.params.empty()) {
            throw DataError("node '" + n.name + "' of kind " + std::string(to_string(n.kind)) +
                            " must not carry parameters");
        }
        for (const auto& r : req) (void)n.param(r);
        if (n.kind == NodeKind::linear && n.param("weight").rank() != 2) {
            throw DataError("linear '" + n.name + "' weight must be rank 2");
        }
        if (n.kind == NodeKind::conv2d && n.param("weight").rank() != 4) {
            throw DataError("conv2d '" + n.name + "' weight must be rank 4");
        }
        for (const auto& [role, t] : n.params) {
            if (!t.all_finite()) throw DataError("parameter " + param_name(n.name, role) + " is not finite");
        }
        for (const auto& in : n.inputs) {
            const Node* src = find(in);
            if (src == nullptr) throw DataError("node '" + n.name + "' references missing node '" + in + "'");
            if (src->kind == NodeKind::output) throw DataError("output node '" + in + "' cannot feed other nodes");
        }
    }
    if (!has_input) throw DataError("graph has no input node");
    if (!has_output) throw DataError("graph has no output node");
    (void)topo_order();
}

std::vector<std::string> GraphModel::consumers(std::string_view name) const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (std::find(n.inputs.begin(), n.inputs.end(), name) != n.inputs.end()) out.push_back(n.name);
    return out;
}

std::vector<std::string> GraphModel::input_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (n.kind == NodeKind::input) out.push_back(n.name);
    return out;
}

std::vector<std::string> GraphModel::output_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
        if (n.kind == NodeKind::output) out.push_back(n.name);
    return out;
}

Tensor evaluate_node(const Node& node, std::span<const Tensor> inputs, const ForwardHooks* hooks) {
    auto param = [&](const std::string& role) -> Tensor {
        auto it = node.params.find(role);
        if (it == node.params.end()) return {};
        if (hooks != nullptr && hooks->param) return hooks->param(node, role, it->second);
        return it->second;
    };
    switch (node.kind) {
        case NodeKind::input:
        case NodeKind::output:
            return inputs[0];
        case NodeKind::linear:
            return kernels::linear(inputs[0], param("weight"), param("bias"));
        case NodeKind::conv2d:
            return kernels::conv2d(inputs[0], param("weight"), param("bias"), conv_params(node.attrs));
        case NodeKind::batchnorm:
            return kernels::batch_norm(inputs[0], param("gamma"), param("beta"), param("running_mean"),
                                       param("running_var"), node.attrs.eps);
        case NodeKind::relu:
            return kernels::relu(inputs[0]);
        case NodeKind::relu6:
            return kernels::relu6(inputs[0]);
        case NodeKind::add:
            return kernels::add(inputs[0], inputs[1]);
        case NodeKind::concat:
            return kernels::concat(inputs, node.attrs.axis);
        case NodeKind::maxpool:
            return kernels::max_pool2d(inputs[0], pool_params(node.attrs));
        case NodeKind::avgpool:
            return kernels::avg_pool2d(inputs[0], pool_params(node.attrs));
    }
    throw DataError("unsupported node kind");
}

std::map<std::string, Tensor> run_graph(const GraphModel& graph, const std::map<std::string, Tensor>& inputs,
                                        const ForwardHooks* hooks) {
    std::map<std::string, Tensor> values;
    std::vector<Tensor> args;
    for (auto idx : graph.topo_order()) {
        const Node& node = graph.nodes()[idx];
        args.clear();
        if (node.kind == NodeKind::input) {
            auto it = inputs.find(node.name);
            if (it == inputs.end()) throw DataError("no value supplied for input '" + node.name + "'");
            const Tensor& x = it->second;
            Shape expected{x.rank() > 0 ? x.dim(0) : 0};
            expected.insert(expected.end(), node.attrs.shape.begin(), node.attrs.shape.end());
            if (x.shape() != expected) {
                throw DataError("input '" + node.name + "' expects [N]+" + shape_to_string(node.attrs.shape) +
                                ", got " + shape_to_string(x.shape()));
            }
            require_finite(x, "input '" + node.name + "'");
            args.push_back(x);
        } else {
            for (const auto& in : node.inputs) args.push_back(values.at(in));
        }
        Tensor y = evaluate_node(node, args, hooks);
        if (hooks != nullptr && hooks->output) y = hooks->output(node, std::move(y));
        values[node.name] = std::move(y);
    }
    return values;
}

Tensor forward(const GraphModel& graph, const Tensor& x, const ForwardHooks* hooks) {
    const auto ins = graph.input_names();
    const auto outs = graph.output_names();
    if (ins.size() != 1 || outs.size() != 1) throw UsageError("forward() needs exactly one input and one output");
    auto values = run_graph(graph, {{ins.front(), x}}, hooks);
    return std::move(values.at(outs.front()));
}

std::map<std::string, Shape> infer_shapes(const GraphModel& graph, std::int64_t batch) {
    std::map<std::string, Shape> shapes;
    for (auto idx : graph.topo_order()) {
        const Node& n = graph.nodes()[idx];
        auto in = [&](std::size_t i) -> const Shape& { return shapes.at(n.inputs[i]); };
        Shape s;
        switch (n.kind) {
            case NodeKind::input:
                s = {batch};
                s.insert(s.end(), n.attrs.shape.begin(), n.attrs.shape.end());
                break;
            case NodeKind::linear: {
                const auto& w = n.param("weight").shape();
                if (numel(in(0)) / batch != w[1]) {
                    throw DataError("linear '" + n.name + "' weight " + shape_to_string(w) +
                                    " incompatible with input " + shape_to_string(in(0)));
                }
                s = {batch, w[0]};
                break;
            }
            case NodeKind::conv2d:
                s = kernels::conv2d_output_shape(in(0), n.param("weight").shape(), conv_params(n.attrs));
                break;
            case NodeKind::maxpool:
            case NodeKind::avgpool:
                s = kernels::pool2d_output_shape(in(0), pool_params(n.attrs));
                break;
            case NodeKind::add:
                if (in(0) != in(1)) throw DataError("add '" + n.name + "' inputs differ in shape");
                s = in(0);
                break;
            case NodeKind::concat: {
                s = in(0);
                const auto axis = static_cast<std::size_t>(n.attrs.axis);
                if (axis >= s.size()) throw DataError("concat '" + n.name + "' axis out of range");
                for (std::size_t i = 1; i < n.inputs.size(); ++i) {
                    Shape other = in(i);
                    if (other.size() != s.size()) throw DataError("concat '" + n.name + "' rank mismatch");
                    s[axis] += other[axis];
                    other[axis] = s[axis];
                    if (other != s) throw DataError("concat '" + n.name + "' shapes differ off-axis");
                }
                break;
            }
            default:
                s = in(0);
                break;
        }
        shapes[n.name] = std::move(s);
    }
    return shapes;
}

std::int64_t mac_count(const GraphModel& graph, std::string_view name) {
    const Node& n = graph.node(name);
    if (!is_mac_layer(n.kind)) throw UsageError("node '" + n.name + "' performs no multiply-accumulates");
    const auto& w = n.param("weight").shape();
    if (n.kind == NodeKind::conv2d) {
        const auto shapes = infer_shapes(graph, 1);
        const auto& out = shapes.at(n.name);
        return w[0] * w[1] * w[2] * w[3] * out[2] * out[3];
    }
    return w[0] * w[1];
}

}  // namespace fixquant
