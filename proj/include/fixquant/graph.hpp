// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fixquant/kernels.hpp"
#include "fixquant/tensor.hpp"

namespace fixquant {

enum class NodeKind { input, output, linear, conv2d, batchnorm, relu, relu6, add, concat, maxpool, avgpool };

std::string_view to_string(NodeKind kind);
NodeKind parse_node_kind(std::string_view name);

/// linear and conv2d: the layers that carry weights and perform MACs.
bool is_mac_layer(NodeKind kind);
bool has_weights(NodeKind kind);

struct NodeAttrs {
    /// input nodes: per-sample shape (the batch axis is prepended at run time).
    Shape shape;
    std::array<int, 2> stride{1, 1};
    std::array<int, 2> padding{0, 0};
    std::array<int, 2> kernel{2, 2};
    int groups = 1;
    int axis = 1;
    double eps = 1e-5;

    bool operator==(const NodeAttrs&) const = default;
};

/// One layer of the dataflow graph. The node's output tensor carries the
/// node's name. Parameter tensors are keyed by role:
///   linear/conv2d: weight, bias (optional), bn_gamma/bn_beta (optional:
///                  statistics of a batchnorm that was folded into the layer)
///   batchnorm:     gamma, beta, running_mean, running_var
struct Node {
    std::string name;
    NodeKind kind = NodeKind::relu;
    std::vector<std::string> inputs;
    NodeAttrs attrs;
    std::map<std::string, Tensor> params;

    const Tensor& param(const std::string& role) const;
    bool has_param(const std::string& role) const { return params.count(role) != 0; }

    bool operator==(const Node&) const = default;
};

/// Directed acyclic graph of layers in insertion order.
class GraphModel {
public:
    GraphModel() = default;

    /// Appends a node. Names must be unique.
    void add_node(Node node);

    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    const Node& node(std::string_view name) const;
    const Node* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }

    /// Parameters are float32 model values; they are rounded to float32 on write.
    void set_param(std::string_view node, const std::string& role, const Tensor& value);
    void erase_param(std::string_view node, const std::string& role);
    void set_kind(std::string_view node, NodeKind kind);

    /// Removes a single-input node, rewiring its consumers to its input.
    void bypass_node(std::string_view name);

    /// Checks structure: unique names, resolvable edges, acyclicity, input
    /// and output nodes present, parameters present iff the kind has weights.
    void validate() const;

    /// Node indices in a deterministic topological order (Kahn's algorithm,
    /// ready nodes taken in insertion order).
    std::vector<std::size_t> topo_order() const;

    std::vector<std::string> consumers(std::string_view name) const;
    std::vector<std::string> input_names() const;
    std::vector<std::string> output_names() const;

    /// Full tensor name of a parameter, "<node>.<role>".
    static std::string param_name(std::string_view node, std::string_view role);

    bool operator==(const GraphModel&) const = default;

private:
    Node& mutable_node(std::string_view name);

    std::vector<Node> nodes_;
};

/// Interception points for a forward pass.
struct ForwardHooks {
    /// Replaces a parameter before use, e.g. with its quantized version.
    std::function<Tensor(const Node&, const std::string& role, const Tensor&)> param;
    /// Receives each node output (after any input hook) and returns the value
    /// that downstream nodes consume.
    std::function<Tensor(const Node&, Tensor)> output;
};

/// Evaluates one node on already-computed inputs.
Tensor evaluate_node(const Node& node, std::span<const Tensor> inputs, const ForwardHooks* hooks = nullptr);

/// Runs the graph. `inputs` maps input node names to batched tensors. Returns
/// every node output.
std::map<std::string, Tensor> run_graph(const GraphModel& graph, const std::map<std::string, Tensor>& inputs,
                                        const ForwardHooks* hooks = nullptr);

/// Convenience for single-input single-output graphs.
Tensor forward(const GraphModel& graph, const Tensor& x, const ForwardHooks* hooks = nullptr);

/// Per-node output shapes for a given batch size.
std::map<std::string, Shape> infer_shapes(const GraphModel& graph, std::int64_t batch = 1);

/// Multiply-accumulate count per sample of a linear or conv2d node.
std::int64_t mac_count(const GraphModel& graph, std::string_view node);

}  // namespace fixquant
