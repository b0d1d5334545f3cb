// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixquant/graph.hpp"

namespace fixquant {

struct ParamRule {
    std::optional<bool> is_quantized;
    std::optional<bool> is_symmetric;
};

struct OpTypeRule {
    std::optional<bool> is_output_quantized;
    std::optional<bool> is_symmetric;
    std::optional<bool> per_channel_quantization;
    std::map<std::string, ParamRule> params;
};

/// Quantizer placement rules. Sections apply in increasing specificity:
/// defaults, params, op_type, supergroups, model_input, model_output.
///
///   {"defaults": {"ops": {"is_output_quantized": true, "is_symmetric": false},
///                 "params": {"is_quantized": true, "is_symmetric": true},
///                 "per_channel_quantization": false},
///    "params": {"bias": {"is_quantized": false}},
///    "op_type": {"conv2d": {"per_channel_quantization": true,
///                           "params": {"weight": {"is_symmetric": true}}}},
///    "supergroups": [{"op_list": ["conv2d", "relu"]}],
///    "model_input": {"is_input_quantized": true},
///    "model_output": {"is_output_quantized": true}}
///
/// Flags may also be given as the strings "True"/"False".
struct SimConfig {
    bool ops_output_quantized = true;
    bool ops_symmetric = false;
    bool params_quantized = true;
    bool params_symmetric = true;
    bool per_channel = false;

    std::map<std::string, ParamRule> params{{"bias", ParamRule{false, std::nullopt}}};
    std::map<NodeKind, OpTypeRule> op_type;
    std::vector<std::vector<NodeKind>> supergroups;
    bool model_input_quantized = true;
    std::optional<bool> model_output_quantized;

    static SimConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    struct ParamPlacement {
        bool enabled = false;
        bool symmetric = true;
        bool per_channel = false;
    };
    struct OutputPlacement {
        bool enabled = false;
        bool symmetric = false;
    };

    ParamPlacement param_placement(NodeKind kind, const std::string& role) const;
    /// Placement of the output quantizer of `node` within `graph`.
    OutputPlacement output_placement(const GraphModel& graph, const Node& node) const;
};

SimConfig load_sim_config(const std::string& path);

}  // namespace fixquant
