// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fixquant/model_io.hpp"
#include "fixquant/quantsim.hpp"

namespace fixquant {

struct DebugOptions {
    int target_bw = 8;
    RangeKind scheme = RangeKind::min_max;
    SimConfig config;
    /// Largest metric loss still counted as harmless.
    double allowed_drop = 0.01;
    /// Score the model reached in its original pipeline, when known. The
    /// 32-bit sim must reproduce it.
    std::optional<double> expected_fp32_score;
    /// Tolerance of the FP32 sanity check on scores.
    double sanity_tolerance = 1e-6;
    std::int64_t calibration_batch = 256;
};

struct SweepEntry {
    std::string quantizer;
    bool is_param = false;
    double score = 0.0;
    /// fp32 score minus score.
    double drop = 0.0;
};

struct DebugReport {
    double fp32_score = 0.0;
    /// Sim at 32 bits and with every quantizer disabled.
    double sim32_score = 0.0;
    double disabled_max_abs_diff = 0.0;
    bool fp32_ok = false;
    std::string fp32_problem;

    double quantized_score = 0.0;
    double weights_only_score = 0.0;
    double activations_only_score = 0.0;
    /// "weights", "activations" or "none".
    std::string dominant;
    bool proceed = false;
    std::vector<std::string> recommendations;
    /// Sorted by drop, largest first.
    std::vector<SweepEntry> sweep;
};

/// The PTQ debugging flow: FP32 sanity gate, weight/activation ablation,
/// suggested fixes and a per-quantizer sweep at the target bit-width with
/// every other quantizer off. Stops after the gate when it fails.
DebugReport debug_quantization(const GraphModel& model, const Dataset& data, const DebugOptions& options);

/// Writes debug_report.json and per_quantizer.csv into `dir`.
void write_debug_report(const DebugReport& report, const std::filesystem::path& dir);

}  // namespace fixquant
