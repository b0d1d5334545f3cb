// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/sim_config.hpp"

#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"

namespace fixquant {

using nlohmann::json;

namespace {

bool as_flag(const json& v, const std::string& where) {
    if (v.is_boolean()) return v.get<bool>();
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "True" || s == "true") return true;
        if (s == "False" || s == "false") return false;
    }
    throw DataError("config: " + where + " must be a boolean");
}

void read_flag(const json& obj, const char* key, bool& out, const std::string& where) {
    if (obj.contains(key)) out = as_flag(obj.at(key), where + "." + key);
}

void read_flag(const json& obj, const char* key, std::optional<bool>& out, const std::string& where) {
    if (obj.contains(key)) out = as_flag(obj.at(key), where + "." + key);
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw DataError("config: " + where + " must be an object");
    for (const auto& [k, v] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok |= k == a;
        if (!ok) throw DataError("config: unknown key '" + k + "' in " + where);
    }
}

ParamRule read_param_rule(const json& j, const std::string& where) {
    check_keys(j, {"is_quantized", "is_symmetric"}, where);
    ParamRule r;
    read_flag(j, "is_quantized", r.is_quantized, where);
    read_flag(j, "is_symmetric", r.is_symmetric, where);
    return r;
}

json param_rule_json(const ParamRule& r) {
    json j = json::object();
    if (r.is_quantized) j["is_quantized"] = *r.is_quantized;
    if (r.is_symmetric) j["is_symmetric"] = *r.is_symmetric;
    return j;
}

}  // namespace

SimConfig SimConfig::from_json(const json& j) {
    check_keys(j, {"defaults", "params", "op_type", "supergroups", "model_input", "model_output"}, "config");
    SimConfig c;
    if (j.contains("defaults")) {
        const auto& d = j.at("defaults");
        check_keys(d, {"ops", "params", "per_channel_quantization"}, "defaults");
        if (d.contains("ops")) {
            check_keys(d.at("ops"), {"is_output_quantized", "is_symmetric"}, "defaults.ops");
            read_flag(d.at("ops"), "is_output_quantized", c.ops_output_quantized, "defaults.ops");
            read_flag(d.at("ops"), "is_symmetric", c.ops_symmetric, "defaults.ops");
        }
        if (d.contains("params")) {
            check_keys(d.at("params"), {"is_quantized", "is_symmetric"}, "defaults.params");
            read_flag(d.at("params"), "is_quantized", c.params_quantized, "defaults.params");
            read_flag(d.at("params"), "is_symmetric", c.params_symmetric, "defaults.params");
        }
        read_flag(d, "per_channel_quantization", c.per_channel, "defaults");
    }
    if (j.contains("params")) {
        for (const auto& [role, rule] : j.at("params").items()) c.params[role] = read_param_rule(rule, "params." + role);
    }
    if (j.contains("op_type")) {
        for (const auto& [name, rule] : j.at("op_type").items()) {
            const auto where = "op_type." + name;
            check_keys(rule, {"is_output_quantized", "is_symmetric", "per_channel_quantization", "params"}, where);
            OpTypeRule r;
            read_flag(rule, "is_output_quantized", r.is_output_quantized, where);
            read_flag(rule, "is_symmetric", r.is_symmetric, where);
            read_flag(rule, "per_channel_quantization", r.per_channel_quantization, where);
            if (rule.contains("params")) {
                for (const auto& [role, pr] : rule.at("params").items())
                    r.params[role] = read_param_rule(pr, where + ".params." + role);
            }
            c.op_type[parse_node_kind(name)] = r;
        }
    }
    if (j.contains("supergroups")) {
        for (const auto& sg : j.at("supergroups")) {
            check_keys(sg, {"op_list"}, "supergroups entry");
            std::vector<NodeKind> ops;
            for (const auto& op : sg.at("op_list")) ops.push_back(parse_node_kind(op.get<std::string>()));
            if (ops.size() < 2) throw DataError("config: a supergroup needs at least two ops");
            c.supergroups.push_back(std::move(ops));
        }
    }
    if (j.contains("model_input")) {
        check_keys(j.at("model_input"), {"is_input_quantized"}, "model_input");
        read_flag(j.at("model_input"), "is_input_quantized", c.model_input_quantized, "model_input");
    }
    if (j.contains("model_output")) {
        check_keys(j.at("model_output"), {"is_output_quantized"}, "model_output");
        read_flag(j.at("model_output"), "is_output_quantized", c.model_output_quantized, "model_output");
    }
    return c;
}

json SimConfig::to_json() const {
    json j;
    j["defaults"] = {{"ops", {{"is_output_quantized", ops_output_quantized}, {"is_symmetric", ops_symmetric}}},
                     {"params", {{"is_quantized", params_quantized}, {"is_symmetric", params_symmetric}}},
                     {"per_channel_quantization", per_channel}};
    j["params"] = json::object();
    for (const auto& [role, r] : params) j["params"][role] = param_rule_json(r);
    j["op_type"] = json::object();
    for (const auto& [kind, r] : op_type) {
        json o = json::object();
        if (r.is_output_quantized) o["is_output_quantized"] = *r.is_output_quantized;
        if (r.is_symmetric) o["is_symmetric"] = *r.is_symmetric;
        if (r.per_channel_quantization) o["per_channel_quantization"] = *r.per_channel_quantization;
        if (!r.params.empty()) {
            o["params"] = json::object();
            for (const auto& [role, pr] : r.params) o["params"][role] = param_rule_json(pr);
        }
        j["op_type"][std::string(to_string(kind))] = o;
    }
    j["supergroups"] = json::array();
    for (const auto& sg : supergroups) {
        json ops = json::array();
        for (auto k : sg) ops.push_back(to_string(k));
        j["supergroups"].push_back({{"op_list", ops}});
    }
    j["model_input"] = {{"is_input_quantized", model_input_quantized}};
    j["model_output"] = json::object();
    if (model_output_quantized) j["model_output"]["is_output_quantized"] = *model_output_quantized;
    return j;
}

SimConfig::ParamPlacement SimConfig::param_placement(NodeKind kind, const std::string& role) const {
    ParamPlacement p{params_quantized, params_symmetric, per_channel};
    if (auto it = params.find(role); it != params.end()) {
        p.enabled = it->second.is_quantized.value_or(p.enabled);
        p.symmetric = it->second.is_symmetric.value_or(p.symmetric);
    }
    if (auto it = op_type.find(kind); it != op_type.end()) {
        p.per_channel = it->second.per_channel_quantization.value_or(p.per_channel);
        if (auto pit = it->second.params.find(role); pit != it->second.params.end()) {
            p.enabled = pit->second.is_quantized.value_or(p.enabled);
            p.symmetric = pit->second.is_symmetric.value_or(p.symmetric);
        }
    }
    // Per-channel granularity applies to weight tensors only.
    if (role != "weight") p.per_channel = false;
    return p;
}

SimConfig::OutputPlacement SimConfig::output_placement(const GraphModel& graph, const Node& node) const {
    OutputPlacement p{ops_output_quantized, ops_symmetric};
    if (auto it = op_type.find(node.kind); it != op_type.end()) {
        p.enabled = it->second.is_output_quantized.value_or(p.enabled);
        p.symmetric = it->second.is_symmetric.value_or(p.symmetric);
    }
    const auto consumers = graph.consumers(node.name);
    // A supergroup runs as one fused op: only its last member is quantized.
    for (const auto& sg : supergroups) {
        for (std::size_t i = 0; i + 1 < sg.size(); ++i) {
            if (sg[i] != node.kind || consumers.size() != 1) continue;
            if (graph.node(consumers.front()).kind == sg[i + 1]) p.enabled = false;
        }
    }
    if (node.kind == NodeKind::input) p.enabled = model_input_quantized;
    const bool feeds_output = std::any_of(consumers.begin(), consumers.end(), [&](const std::string& c) {
        return graph.node(c).kind == NodeKind::output;
    });
    if (feeds_output && model_output_quantized) p.enabled = *model_output_quantized;
    return p;
}

SimConfig load_sim_config(const std::string& path) { return SimConfig::from_json(read_json(path)); }

}  // namespace fixquant
