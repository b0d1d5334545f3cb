// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/quantsim.hpp"

#include <algorithm>

#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"

namespace fixquant {

using nlohmann::json;

namespace {

constexpr int kEncodingsVersion = 1;

bool has_output_quantizer(NodeKind kind) {
    switch (kind) {
        case NodeKind::output:
        case NodeKind::maxpool:
        case NodeKind::avgpool:
            return false;
        default:
            return true;
    }
}

void check_bitwidth(int bw) {
    if (bw < 2 || bw > 32) throw UsageError("bitwidth must be in [2, 32], got " + std::to_string(bw));
}

}  // namespace

QuantizerSpec TensorQuantizer::spec() const { return QuantizerSpec{encodings, channel_axis, enabled}; }

bool is_quantizable_param(const std::string& role) { return role == "weight" || role == "bias"; }

json encoding_to_json(const QuantEncoding& e) {
    return {{"bitwidth", e.bitwidth},
            {"scale", e.scale},
            {"offset", -e.zero_point},
            {"is_symmetric", e.symmetric},
            {"is_signed", e.is_signed},
            {"min", e.grid_min()},
            {"max", e.grid_max()}};
}

QuantEncoding encoding_from_json(const json& j, const std::string& where) {
    QuantEncoding e;
    try {
        e.bitwidth = j.at("bitwidth").get<int>();
        e.scale = static_cast<double>(static_cast<float>(j.at("scale").get<double>()));
        e.zero_point = -j.at("offset").get<std::int64_t>();
        e.symmetric = j.at("is_symmetric").get<bool>();
        e.is_signed = j.at("is_signed").get<bool>();
    } catch (const json::exception&) {
        throw DataError("encodings: malformed record for '" + where + "'");
    }
    try {
        e.validate();
    } catch (const UsageError& err) {
        throw DataError("encodings: invalid record for '" + where + "': " + err.what());
    }
    return e;
}

QuantSimModel::QuantSimModel(GraphModel graph, QuantSimOptions options, SimConfig config)
    : graph_(std::move(graph)), options_(options), config_(std::move(config)) {
    graph_.validate();
    (void)infer_shapes(graph_);
    check_bitwidth(options_.default_param_bw);
    check_bitwidth(options_.default_output_bw);
    if (options_.max_calibration_samples <= 0) throw UsageError("max_calibration_samples must be positive");
    attach_quantizers();
}

QuantSimModel create_quantsim(const GraphModel& model, int default_param_bw, int default_output_bw,
                              RangeKind scheme, const SimConfig& config) {
    QuantSimOptions o;
    o.default_param_bw = default_param_bw;
    o.default_output_bw = default_output_bw;
    o.param_scheme = scheme;
    o.activation_scheme = scheme;
    return QuantSimModel(model, o, config);
}

void QuantSimModel::attach_quantizers() {
    params_.clear();
    activations_.clear();
    for (const auto& n : graph_.nodes()) {
        if (is_mac_layer(n.kind)) {
            for (const auto& [role, t] : n.params) {
                if (!is_quantizable_param(role)) continue;
                const auto p = config_.param_placement(n.kind, role);
                TensorQuantizer q;
                q.bitwidth = options_.default_param_bw;
                q.symmetric = p.symmetric;
                if (p.per_channel) q.channel_axis = 0;
                q.enabled = p.enabled;
                params_[GraphModel::param_name(n.name, role)] = std::move(q);
            }
        }
        if (has_output_quantizer(n.kind)) {
            const auto p = config_.output_placement(graph_, n);
            TensorQuantizer q;
            q.bitwidth = options_.default_output_bw;
            q.symmetric = p.symmetric;
            q.enabled = p.enabled;
            activations_[n.name] = std::move(q);
        }
    }
}

void QuantSimModel::set_param(std::string_view node, const std::string& role, const Tensor& value) {
    graph_.set_param(node, role, value);
}

bool QuantSimModel::has_quantizer(const std::string& name) const {
    return params_.count(name) != 0 || activations_.count(name) != 0;
}

const TensorQuantizer& QuantSimModel::quantizer(const std::string& name) const {
    if (auto it = params_.find(name); it != params_.end()) return it->second;
    if (auto it = activations_.find(name); it != activations_.end()) return it->second;
    throw UsageError("no quantizer named '" + name + "'");
}

TensorQuantizer& QuantSimModel::quantizer(const std::string& name) {
    return const_cast<TensorQuantizer&>(std::as_const(*this).quantizer(name));
}

std::vector<std::string> QuantSimModel::quantizer_names() const {
    std::vector<std::string> out;
    for (const auto& [name, q] : params_) out.push_back(name);
    for (const auto& [name, q] : activations_) out.push_back(name);
    return out;
}

void QuantSimModel::set_bitwidth(const std::string& name, int bitwidth) {
    check_bitwidth(bitwidth);
    auto& q = quantizer(name);
    if (q.bitwidth == bitwidth && q.has_encoding()) return;
    q.bitwidth = bitwidth;
    q.frozen = false;
    if (is_param_quantizer(name) || q.stats) {
        recompute_encoding(name);
    } else {
        q.encodings.clear();
    }
}

void QuantSimModel::set_enabled(const std::string& name, bool enabled) { quantizer(name).enabled = enabled; }

void QuantSimModel::set_all_enabled(bool enabled) {
    for (auto& [name, q] : params_) q.enabled = enabled;
    for (auto& [name, q] : activations_) q.enabled = enabled;
}

void QuantSimModel::recompute_encoding(const std::string& name) {
    auto& q = quantizer(name);
    if (auto it = params_.find(name); it != params_.end()) {
        const auto dot = name.rfind('.');
        const Tensor& w = graph_.node(name.substr(0, dot)).param(name.substr(dot + 1));
        RangeAccumulator acc(q.channel_axis);
        acc.observe(w);
        q.encodings = fixquant::compute_encodings(acc, options_.param_scheme, q.bitwidth, q.symmetric, options_.sqnr);
        return;
    }
    if (!q.stats || q.stats->empty()) throw UsageError("quantizer '" + name + "' has no calibration statistics");
    q.encodings = fixquant::compute_encodings(*q.stats, options_.activation_scheme, q.bitwidth, q.symmetric, options_.sqnr);
}

void QuantSimModel::compute_param_encodings() {
    for (auto& [name, q] : params_)
        if (!q.frozen) recompute_encoding(name);
}

void QuantSimModel::compute_encodings(std::span<const Tensor> feed) {
    if (feed.empty()) throw DataError("compute_encodings needs at least one calibration batch");
    compute_param_encodings();
    const auto inputs = graph_.input_names();
    if (inputs.size() != 1) throw UsageError("calibration supports single-input models only");

    for (auto& [name, q] : activations_)
        if (!q.frozen) q.stats = RangeAccumulator(std::nullopt);
    ForwardHooks observe;
    observe.output = [&](const Node& node, Tensor y) {
        auto it = activations_.find(node.name);
        if (it != activations_.end() && !it->second.frozen) it->second.stats->observe(y);
        return y;
    };
    std::int64_t seen = 0;
    for (const auto& batch : feed) {
        if (seen >= options_.max_calibration_samples) break;
        const auto take = std::min(batch.dim(0), options_.max_calibration_samples - seen);
        const Tensor x = take == batch.dim(0) ? batch : slice_rows(batch, 0, take);
        (void)run_graph(graph_, {{inputs.front(), x}}, &observe);
        seen += take;
    }
    for (auto& [name, q] : activations_)
        if (!q.frozen) recompute_encoding(name);
}

std::optional<std::string> QuantSimModel::output_quantizer_for(const std::string& node) const {
    if (activations_.count(node) != 0) return node;
    const Node& n = graph_.node(node);
    // Max pooling selects values that are already on the input grid.
    if (n.kind == NodeKind::avgpool) {
        std::string src = n.inputs.front();
        while (activations_.count(src) == 0) {
            const Node& s = graph_.node(src);
            if (s.kind != NodeKind::maxpool && s.kind != NodeKind::avgpool) return std::nullopt;
            src = s.inputs.front();
        }
        return src;
    }
    return std::nullopt;
}

const TensorQuantizer* QuantSimModel::enabled_quantizer(const std::string& name) const {
    const TensorQuantizer* q = nullptr;
    if (auto it = params_.find(name); it != params_.end()) q = &it->second;
    if (auto it = activations_.find(name); it != activations_.end()) q = &it->second;
    if (q == nullptr || !q->enabled) return nullptr;
    if (!q->has_encoding()) {
        throw UsageError("quantizer '" + name + "' has no encoding; run compute_encodings first");
    }
    return q;
}

void QuantSimModel::require_encodings() const {
    for (const auto& name : quantizer_names()) (void)enabled_quantizer(name);
}

ForwardHooks QuantSimModel::hooks(bool quantize_params, bool quantize_activations) const {
    ForwardHooks h;
    if (quantize_params) {
        h.param = [this](const Node& node, const std::string& role, const Tensor& t) {
            const auto* q = enabled_quantizer(GraphModel::param_name(node.name, role));
            return q == nullptr ? t : qdq(t, q->spec());
        };
    }
    if (quantize_activations) {
        h.output = [this](const Node& node, Tensor y) {
            const auto name = output_quantizer_for(node.name);
            if (!name) return y;
            const auto* q = enabled_quantizer(*name);
            return q == nullptr ? y : qdq(y, q->spec());
        };
    }
    return h;
}

Tensor QuantSimModel::forward(const Tensor& x) const {
    const auto h = hooks();
    return fixquant::forward(graph_, x, &h);
}

std::map<std::string, Tensor> QuantSimModel::run(const Tensor& x, std::map<std::string, Tensor>* pre_quant) const {
    auto h = hooks();
    if (pre_quant != nullptr) {
        auto quant = h.output;
        h.output = [pre_quant, quant](const Node& node, Tensor y) {
            (*pre_quant)[node.name] = y;
            return quant(node, std::move(y));
        };
    }
    const auto inputs = graph_.input_names();
    if (inputs.size() != 1) throw UsageError("run() supports single-input models only");
    return run_graph(graph_, {{inputs.front(), x}}, &h);
}

json QuantSimModel::encodings_json(bool mark_frozen) const {
    auto section = [&](const std::map<std::string, TensorQuantizer>& qs) {
        json s = json::object();
        for (const auto& [name, q] : qs) {
            if (!q.enabled || !q.has_encoding()) continue;
            json list = json::array();
            for (const auto& e : q.encodings) {
                json r = encoding_to_json(e);
                if (mark_frozen || q.frozen) r["frozen"] = true;
                list.push_back(std::move(r));
            }
            s[name] = std::move(list);
        }
        return s;
    };
    return {{"format", "fixquant-encodings"},
            {"version", kEncodingsVersion},
            {"activation_encodings", section(activations_)},
            {"param_encodings", section(params_)}};
}

void QuantSimModel::import_encodings(const json& j, bool freeze) {
    if (!j.is_object() || j.value("format", "") != "fixquant-encodings") {
        throw DataError("encodings: not a fixquant-encodings document");
    }
    auto load = [&](const char* key, std::map<std::string, TensorQuantizer>& qs) {
        if (!j.contains(key)) return;
        for (const auto& [name, records] : j.at(key).items()) {
            auto it = qs.find(name);
            if (it == qs.end()) throw DataError(std::string("encodings: unknown tensor name '") + name + "' in " + key);
            auto& q = it->second;
            if (!records.is_array() || records.empty()) {
                throw DataError("encodings: '" + name + "' must be a non-empty list");
            }
            std::int64_t expected = 1;
            if (q.channel_axis) {
                const auto dot = name.rfind('.');
                expected = graph_.node(name.substr(0, dot)).param(name.substr(dot + 1)).dim(*q.channel_axis);
            }
            if (static_cast<std::int64_t>(records.size()) != expected) {
                throw DataError("encodings: '" + name + "' has " + std::to_string(records.size()) +
                                " records, expected " + std::to_string(expected));
            }
            std::vector<QuantEncoding> encs;
            bool frozen = freeze;
            for (const auto& r : records) {
                auto e = encoding_from_json(r, name);
                if (e.bitwidth != q.bitwidth) {
                    throw DataError("encodings: bitwidth mismatch for '" + name + "': file has " +
                                    std::to_string(e.bitwidth) + ", quantizer uses " + std::to_string(q.bitwidth));
                }
                frozen = frozen || r.value("frozen", false);
                encs.push_back(e);
            }
            q.encodings = std::move(encs);
            q.symmetric = q.encodings.front().symmetric;
            q.enabled = true;
            q.frozen = frozen;
        }
    };
    load("activation_encodings", activations_);
    load("param_encodings", params_);
}

void QuantSimModel::export_model(const std::filesystem::path& prefix) const {
    require_encodings();
    const auto base = prefix.string();
    save_model(graph_, base + ".json");
    write_json(base + ".encodings.json", encodings_json());
}

}  // namespace fixquant
