// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fixquant/quantsim.hpp"

namespace fixquant {

struct CandidatePair {
    int activation_bw = 8;
    int param_bw = 8;

    void validate() const;
    std::int64_t product() const { return static_cast<std::int64_t>(activation_bw) * param_bw; }
    /// "A16W8"
    std::string label() const;
    bool operator==(const CandidatePair&) const = default;
};

struct QuantizerGroup {
    int id = 0;
    /// Nodes owning a member quantizer, in topological order.
    std::vector<std::string> nodes;
    std::vector<std::string> param_quantizers;
    std::vector<std::string> activation_quantizers;
    /// Linear/conv layers whose parameters are in the group.
    std::vector<std::string> mac_layers;
};

/// Partitions every quantizer of `sim` into groups: a linear/conv layer with
/// the activations that follow it, add/concat inputs merged, the model input
/// joined to its first consumer.
std::vector<QuantizerGroup> find_layer_groups(const QuantSimModel& sim);

/// Index of the candidate with the largest activation_bw * param_bw (first
/// one on ties).
std::size_t max_candidate(const std::vector<CandidatePair>& candidates);

/// Sum over linear/conv layers of MACs * activation_bw * param_bw, each layer
/// at its group's pair. `assignment` is indexed by group id.
double bit_ops(const QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
               const std::vector<CandidatePair>& assignment);

/// bit_ops divided by its value with every group at `baseline`.
double relative_bit_ops(const QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
                        const std::vector<CandidatePair>& assignment, const CandidatePair& baseline);

/// Sets the group's parameter quantizers to param_bw and its activation
/// quantizers to activation_bw, re-deriving their encodings.
void apply_candidate(QuantSimModel& sim, const QuantizerGroup& group, const CandidatePair& candidate);

/// Higher is better (accuracy, or negative MSE).
using EvalCallback = std::function<double(const QuantSimModel&)>;

struct AccuracyEntry {
    int group = 0;
    CandidatePair candidate;
    double accuracy = 0.0;
};

struct AccuracyList {
    /// Phase-1 score with every group at the max candidate.
    double baseline = 0.0;
    std::vector<AccuracyEntry> entries;
};

struct ParetoEntry {
    int group = 0;
    CandidatePair candidate;
    double relative_bit_ops = 1.0;
    double accuracy = 0.0;
};

/// Hash of the model, its quantizer setup and the candidates; stored in both
/// cache files.
std::string amp_fingerprint(const QuantSimModel& sim, const std::vector<CandidatePair>& candidates);

/// Phase 1. For each group and each non-max candidate, evaluates the sim with
/// only that group lowered. Entries already in <cache_dir>/accuracy_list.json
/// are reused; the file is rewritten after every evaluation. `sim` must be at
/// the max candidate and is left there.
AccuracyList sensitivity_analysis(QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
                                  const std::vector<CandidatePair>& candidates, const EvalCallback& eval_phase1,
                                  const std::filesystem::path& cache_dir);

struct ParetoResult {
    double baseline_accuracy = 0.0;
    /// Every evaluated move, as stored in pareto_list.json.
    std::vector<ParetoEntry> evaluated;
    /// Leading entries within the allowed drop; `sim` carries the last one.
    std::vector<ParetoEntry> accepted;
    std::vector<CandidatePair> assignment;
    int phase2_evaluations = 0;
};

/// Phase 2: greedy descent in bit-ops, cheapest sensitivity per bit-op saved
/// first. Cached entries in <cache_dir>/pareto_list.json are replayed
/// without evaluation and the search continues after the last of them.
ParetoResult build_pareto(QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
                          const std::vector<CandidatePair>& candidates, const AccuracyList& accuracy,
                          const EvalCallback& eval_phase2, double allowed_accuracy_drop,
                          const std::filesystem::path& cache_dir);

struct AmpResult {
    std::vector<QuantizerGroup> groups;
    AccuracyList accuracy;
    ParetoResult pareto;
};

/// Runs all three phases and leaves `sim` at the chosen assignment. Writes
/// accuracy_list.json, pareto_list.json, sensitivity.csv and pareto.csv into
/// results_dir. clean_start wipes earlier results; without it both caches
/// must exist and match the model.
AmpResult choose_mixed_precision(QuantSimModel& sim, const std::vector<CandidatePair>& candidates,
                                 const EvalCallback& eval_phase1, const EvalCallback& eval_phase2,
                                 double allowed_accuracy_drop, const std::filesystem::path& results_dir,
                                 bool clean_start);

}  // namespace fixquant
