// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixquant/graph.hpp"
#include "fixquant/quantizer.hpp"
#include "fixquant/range_setting.hpp"
#include "fixquant/sim_config.hpp"

namespace fixquant {

/// A quantizer attached to a parameter or an activation tensor.
struct TensorQuantizer {
    int bitwidth = 8;
    bool symmetric = false;
    /// Set for per-channel weight quantizers.
    std::optional<int> channel_axis;
    bool enabled = true;
    /// Frozen encodings are kept by compute_encodings.
    bool frozen = false;
    /// Computed or imported encodings; empty until then.
    std::vector<QuantEncoding> encodings;
    /// Calibration statistics of activation quantizers.
    std::optional<RangeAccumulator> stats;

    bool has_encoding() const { return !encodings.empty(); }
    QuantizerSpec spec() const;
};

struct QuantSimOptions {
    int default_param_bw = 8;
    int default_output_bw = 8;
    RangeKind param_scheme = RangeKind::min_max;
    RangeKind activation_scheme = RangeKind::min_max;
    SqnrOptions sqnr{};
    /// Calibration stops after this many samples.
    std::int64_t max_calibration_samples = 1000;
};

/// A model plus simulated quantizers. Parameter quantizers are keyed
/// "<node>.<role>", activation quantizers by the name of the node whose
/// output they quantize.
class QuantSimModel {
public:
    QuantSimModel(GraphModel graph, QuantSimOptions options, SimConfig config);

    const GraphModel& graph() const noexcept { return graph_; }
    const QuantSimOptions& options() const noexcept { return options_; }
    const SimConfig& config() const noexcept { return config_; }

    void set_param(std::string_view node, const std::string& role, const Tensor& value);

    const std::map<std::string, TensorQuantizer>& param_quantizers() const { return params_; }
    const std::map<std::string, TensorQuantizer>& activation_quantizers() const { return activations_; }

    bool has_quantizer(const std::string& name) const;
    const TensorQuantizer& quantizer(const std::string& name) const;
    TensorQuantizer& quantizer(const std::string& name);
    bool is_param_quantizer(const std::string& name) const { return params_.count(name) != 0; }

    /// Every quantizer name, parameters first, each set in name order.
    std::vector<std::string> quantizer_names() const;

    /// Changes a quantizer's bit-width and re-derives its encoding from the
    /// weights or the retained calibration statistics. Unfreezes it.
    void set_bitwidth(const std::string& name, int bitwidth);

    void set_enabled(const std::string& name, bool enabled);
    void set_all_enabled(bool enabled);

    /// Calibrates every enabled, non-frozen quantizer: weights are observed
    /// directly, activations on the floating-point forward pass over `feed`
    /// (batches for the single model input).
    void compute_encodings(std::span<const Tensor> feed);

    /// Only the parameter quantizers; needs no data.
    void compute_param_encodings();

    /// Recomputes one quantizer's encoding at its current settings.
    void recompute_encoding(const std::string& name);

    /// Name of the quantizer whose encoding applies to `node`'s output, if
    /// any: its own, or for avgpool the one of the tensor it pools.
    std::optional<std::string> output_quantizer_for(const std::string& node) const;

    /// Hooks applying qdq to parameters and activations.
    ForwardHooks hooks(bool quantize_params = true, bool quantize_activations = true) const;

    /// Simulated quantized forward pass.
    Tensor forward(const Tensor& x) const;

    /// All node outputs. When `pre_quant` is given it also receives the
    /// output of every node before its output quantizer.
    std::map<std::string, Tensor> run(const Tensor& x, std::map<std::string, Tensor>* pre_quant = nullptr) const;

    /// Throws UsageError naming the first enabled quantizer without encoding.
    void require_encodings() const;

    nlohmann::json encodings_json(bool mark_frozen = false) const;
    void import_encodings(const nlohmann::json& j, bool freeze);

    /// Writes <prefix>.json, <prefix>.bin and <prefix>.encodings.json.
    void export_model(const std::filesystem::path& prefix) const;

private:
    void attach_quantizers();
    const TensorQuantizer* enabled_quantizer(const std::string& name) const;

    GraphModel graph_;
    QuantSimOptions options_;
    SimConfig config_;
    std::map<std::string, TensorQuantizer> params_;
    std::map<std::string, TensorQuantizer> activations_;
};

QuantSimModel create_quantsim(const GraphModel& model, int default_param_bw = 8, int default_output_bw = 8,
                              RangeKind scheme = RangeKind::min_max, const SimConfig& config = {});

/// Parameter roles that receive quantizers.
bool is_quantizable_param(const std::string& role);

nlohmann::json encoding_to_json(const QuantEncoding& e);
QuantEncoding encoding_from_json(const nlohmann::json& j, const std::string& where);

}  // namespace fixquant
