// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/debug.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fixquant/error.hpp"
#include "fixquant/qat.hpp"

namespace fixquant {

namespace {

double metric(const QuantSimModel& sim, const Dataset& data) { return evaluate(sim, data).second; }

QuantSimModel calibrated(const GraphModel& model, const Dataset& data, const DebugOptions& o, int bw) {
    QuantSimOptions so;
    so.default_param_bw = bw;
    so.default_output_bw = bw;
    so.param_scheme = o.scheme;
    so.activation_scheme = o.scheme;
    QuantSimModel sim(model, so, o.config);
    sim.compute_encodings(make_batches(data.inputs, o.calibration_batch));
    return sim;
}

// Enables exactly the quantizers in `on` among those the config enabled.
void enable_only(QuantSimModel& sim, const std::vector<std::string>& configured,
                 const std::function<bool(const std::string&)>& on) {
    sim.set_all_enabled(false);
    for (const auto& name : configured)
        if (on(name)) sim.set_enabled(name, true);
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

}  // namespace

DebugReport debug_quantization(const GraphModel& model, const Dataset& data, const DebugOptions& options) {
    if (data.size() == 0) throw DataError("debug needs evaluation data");
    if (options.target_bw < 2 || options.target_bw > 32) throw UsageError("target bitwidth must be in [2, 32]");
    DebugReport r;
    r.fp32_score = evaluate(model, data).second;

    // 1. FP32 sanity: a 32-bit sim and a disabled sim must match the float model.
    {
        auto sim = calibrated(model, data, options, 32);
        r.sim32_score = metric(sim, data);
        sim.set_all_enabled(false);
        const auto batches = make_batches(data.inputs, options.calibration_batch);
        for (const auto& x : batches) {
            const Tensor a = sim.forward(x), b = forward(model, x);
            for (std::int64_t i = 0; i < a.size(); ++i)
                r.disabled_max_abs_diff = std::max(r.disabled_max_abs_diff, std::abs(a[i] - b[i]));
        }
        const double reference = options.expected_fp32_score.value_or(r.fp32_score);
        if (r.disabled_max_abs_diff != 0.0) {
            r.fp32_problem = "simulation with quantizers disabled differs from the float model";
        } else if (!(std::abs(r.sim32_score - reference) <= options.sanity_tolerance * (1.0 + std::abs(reference)))) {
            std::ostringstream msg;
            msg << "32-bit simulation scores " << r.sim32_score << " but the float pipeline scores " << reference
                << "; check model conversion and preprocessing before quantizing";
            r.fp32_problem = msg.str();
        }
        r.fp32_ok = r.fp32_problem.empty();
        if (!r.fp32_ok) {
            r.recommendations.push_back("fix the FP32 pipeline");
            return r;
        }
    }

    auto sim = calibrated(model, data, options, options.target_bw);
    std::vector<std::string> configured;
    for (const auto& name : sim.quantizer_names())
        if (sim.quantizer(name).enabled) configured.push_back(name);

    // 2. Weights only vs activations only.
    r.quantized_score = metric(sim, data);
    enable_only(sim, configured, [&](const std::string& n) { return sim.is_param_quantizer(n); });
    r.weights_only_score = metric(sim, data);
    enable_only(sim, configured, [&](const std::string& n) { return !sim.is_param_quantizer(n); });
    r.activations_only_score = metric(sim, data);

    // 3. Global fixes for whichever side loses more.
    const double full_drop = r.fp32_score - r.quantized_score;
    const double w_drop = r.fp32_score - r.weights_only_score;
    const double a_drop = r.fp32_score - r.activations_only_score;
    r.proceed = full_drop <= options.allowed_drop;
    if (r.proceed) {
        r.dominant = "none";
        r.recommendations.push_back("proceed at " + std::to_string(options.target_bw) + " bits");
    } else if (w_drop >= a_drop) {
        r.dominant = "weights";
        r.recommendations = {"cross-layer equalization", "adaround", "per-channel weight quantization"};
    } else {
        r.dominant = "activations";
        r.recommendations = {"sqnr range setting", "bias correction", "quantization-aware training"};
    }

    // 4. One quantizer at a time.
    for (const auto& q : configured) {
        enable_only(sim, configured, [&](const std::string& n) { return n == q; });
        const double s = metric(sim, data);
        r.sweep.push_back({q, sim.is_param_quantizer(q), s, r.fp32_score - s});
    }
    std::stable_sort(r.sweep.begin(), r.sweep.end(),
                     [](const SweepEntry& a, const SweepEntry& b) { return a.drop > b.drop; });
    if (!r.proceed && !r.sweep.empty())
        r.recommendations.push_back("inspect " + r.sweep.front().quantizer + " first");
    return r;
}

void write_debug_report(const DebugReport& r, const std::filesystem::path& dir) {
    nlohmann::json j{{"fp32_score", r.fp32_score},
                     {"sim32_score", r.sim32_score},
                     {"disabled_max_abs_diff", r.disabled_max_abs_diff},
                     {"fp32_ok", r.fp32_ok},
                     {"fp32_problem", r.fp32_problem},
                     {"recommendations", r.recommendations}};
    if (r.fp32_ok) {
        j["quantized_score"] = r.quantized_score;
        j["weights_only_score"] = r.weights_only_score;
        j["activations_only_score"] = r.activations_only_score;
        j["dominant"] = r.dominant;
        j["proceed"] = r.proceed;
    }
    write_json(dir / "debug_report.json", j);
    std::ostringstream csv;
    csv << "rank,quantizer,kind,score,drop\n";
    for (std::size_t i = 0; i < r.sweep.size(); ++i) {
        const auto& e = r.sweep[i];
        csv << i + 1 << ',' << e.quantizer << ',' << (e.is_param ? "param" : "activation") << ',' << fmt(e.score)
            << ',' << fmt(e.drop) << '\n';
    }
    write_text(dir / "per_quantizer.csv", csv.str());
}

}  // namespace fixquant
