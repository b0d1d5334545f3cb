// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fixquant/graph.hpp"
#include "fixquant/quantsim.hpp"

namespace fixquant {

struct FoldReport {
    /// (batchnorm, layer it was folded into)
    std::vector<std::pair<std::string, std::string>> folded;
    /// Batchnorms without a foldable predecessor, left in place.
    std::vector<std::string> unfolded;
};

/// Folds every batchnorm that directly follows a linear/conv layer (and is
/// that layer's only consumer) into the layer. The layer keeps the batchnorm's
/// gamma and beta as bn_gamma / bn_beta: the statistics of its new output.
GraphModel fold_batch_norms(const GraphModel& model, FoldReport* report = nullptr);

/// Rewrites every relu6 as relu; returns the number of rewritten nodes.
int replace_relu6_with_relu(GraphModel& model);

struct CLEPair {
    std::string layer1;
    std::string layer2;
    std::vector<double> scales;
    std::vector<double> range1_before, range2_before;
    std::vector<double> range1_after, range2_after;
};

struct HighBiasEntry {
    std::string layer1;
    std::string layer2;
    bool applied = false;
    std::string reason;
    std::vector<double> absorbed;
};

struct CLEReport {
    FoldReport fold;
    int relu6_replaced = 0;
    std::vector<CLEPair> pairs;
    std::vector<HighBiasEntry> high_bias;
};

/// Consecutive (conv/linear, [relu], conv/linear) pairs in topological order.
std::vector<std::pair<std::string, std::string>> find_cle_pairs(const GraphModel& model);

/// Per-channel max |w| of layer1's output channels and of layer2's weights
/// reading each of those channels.
std::pair<std::vector<double>, std::vector<double>> pair_ranges(const GraphModel& model, const std::string& layer1,
                                                                const std::string& layer2);

/// Rescales one pair: s_i = sqrt(r1_i / r2_i); row i of layer1 (and its bias)
/// is divided by s_i, the weights of layer2 reading channel i are multiplied.
CLEPair cross_layer_scale(GraphModel& model, const std::string& layer1, const std::string& layer2);

/// Moves c_i = max(0, beta_i - 3 |gamma_i|) from layer1's bias into layer2's
/// bias. Skipped (and reported) without batchnorm statistics or when layer2
/// zero-pads its input.
HighBiasEntry absorb_high_bias(GraphModel& model, const std::string& layer1, const std::string& layer2);

/// BN folding, relu6 replacement, cross-layer scaling of every pair (single
/// pass) and high-bias absorption. Expects the model before BN folding.
std::pair<GraphModel, CLEReport> equalize_model(const GraphModel& model);

enum class BiasCorrectionMode { empirical, analytic_then_empirical };

struct BiasCorrectionOptions {
    BiasCorrectionMode mode = BiasCorrectionMode::empirical;
    std::int64_t num_samples = 512;
};

struct BiasCorrectionReport {
    /// Bias deltas per corrected layer.
    std::map<std::string, std::vector<double>> corrections;
    std::vector<std::string> analytic_layers;
    std::vector<std::string> empirical_layers;
    std::vector<std::string> skipped_layers;
};

/// Per-channel means over every axis except axis 1.
std::vector<double> channel_means(const Tensor& t);

/// E[relu(z)] for z ~ N(mean, stddev^2).
double relu_normal_mean(double mean, double stddev);

/// Adjusts the biases of `sim` so the expected quantized pre-activation of each
/// layer matches the floating-point one. Layers are visited in topological
/// order against the already corrected model. The analytic path uses the
/// folded batchnorm statistics of the preceding layer; other layers fall back
/// to the empirical estimate, or are skipped when `feed` is empty.
BiasCorrectionReport bias_correct(QuantSimModel& sim, std::span<const Tensor> feed,
                                  const BiasCorrectionOptions& options = {});

struct AdaRoundParams {
    std::int64_t num_batches = 4;
    int num_iterations = 10000;
    double reg_param = 0.01;
    std::pair<double, double> beta_range{20.0, 2.0};
    double warm_start = 0.2;
    double learning_rate = 1e-2;

    void validate() const;
};

struct AdaRoundLayerReport {
    std::string layer;
    double loss_nearest = 0.0;
    double loss_adaround = 0.0;
    /// Elements rounded differently from round-to-nearest.
    std::int64_t flipped = 0;
    /// True when the optimized rounding lost to nearest and was discarded.
    bool fell_back_to_nearest = false;
};

struct AdaRoundReport {
    std::vector<AdaRoundLayerReport> layers;
    /// Frozen parameter encodings in the export schema.
    nlohmann::json encodings;
};

/// Reconstruction loss sum_r e_r^T G e_r / (tr(G) / K) where e is the rounding
/// residual in grid units and G the Gram matrix of the layer inputs.
double rounding_loss(std::span<const double> residual, std::span<const double> gram, std::int64_t k);

/// Optimizes the rounding of every enabled weight quantizer of `sim`, layer by
/// layer in topological order. Each layer sees inputs produced by the already
/// rounded layers before it; activations are not quantized. Rounded weights
/// replace the originals and their encodings are frozen.
AdaRoundReport adaround_sim(QuantSimModel& sim, std::span<const Tensor> feed, const AdaRoundParams& params);

/// Convenience: quantizes the weights of `model` at `param_bw` and returns
/// the rounded model together with the encodings file contents.
std::pair<GraphModel, AdaRoundReport> adaround(const GraphModel& model, std::span<const Tensor> feed,
                                               const AdaRoundParams& params, int param_bw = 8,
                                               RangeKind scheme = RangeKind::min_max, const SimConfig& config = {});

struct PtqOptions {
    int param_bw = 8;
    int output_bw = 8;
    RangeKind param_scheme = RangeKind::sqnr;
    RangeKind activation_scheme = RangeKind::min_max;
    SimConfig config{};
    bool fold_batch_norms = true;
    bool use_cle = true;
    bool use_adaround = true;
    bool use_bias_correction = true;
    AdaRoundParams adaround{};
    BiasCorrectionOptions bias_correction{};
};

struct PtqResult {
    QuantSimModel sim;
    CLEReport cle;
    std::optional<AdaRoundReport> adaround;
    std::optional<BiasCorrectionReport> bias_correction;
    std::vector<std::string> steps;
};

/// CLE -> quantizers -> weight range setting -> AdaRound, or bias correction
/// when AdaRound is off -> activation range setting on `feed`.
PtqResult run_ptq_pipeline(const GraphModel& model, std::span<const Tensor> feed, const PtqOptions& options = {});

}  // namespace fixquant
