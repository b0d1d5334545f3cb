// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fixquant/graph.hpp"
#include "fixquant/model_io.hpp"
#include "fixquant/quantsim.hpp"

namespace fixquant {

/// Straight-through estimate of d qdq(x) / dx: upstream passes where
/// grid_min <= x <= grid_max and is blocked at clipped elements.
Tensor qdq_backward(const Tensor& upstream, const Tensor& x, const QuantEncoding& e);

/// Same, for a per-tensor or per-channel quantizer; disabled specs pass through.
Tensor qdq_backward(const Tensor& upstream, const Tensor& x, const QuantizerSpec& spec);

/// A recorded forward pass: every node's inputs, effective parameters and
/// pre-quantization output, with the quantizers that were applied.
struct GradTape {
    struct Step {
        std::size_t node = 0;
        std::vector<Tensor> inputs;
        /// Parameters as used (after qdq) and as stored.
        std::map<std::string, Tensor> params;
        std::map<std::string, Tensor> raw_params;
        std::map<std::string, QuantizerSpec> param_quantizers;
        Tensor pre;
        std::optional<QuantizerSpec> output_quantizer;
    };

    const GraphModel* graph = nullptr;
    std::vector<Step> steps;
    /// Post-quantization value of every node.
    std::map<std::string, Tensor> values;

    const Tensor& output() const;
};

/// Floating-point forward pass on a plain graph.
GradTape record_forward(const GraphModel& graph, const Tensor& x);

/// Simulated quantized forward pass through `sim`'s enabled quantizers.
GradTape record_forward(const QuantSimModel& sim, const Tensor& x);

/// Reverse pass from the gradient of the (single) model output. Returns
/// gradients for every weight and bias keyed "<node>.<role>".
std::map<std::string, Tensor> backward(const GradTape& tape, const Tensor& output_grad);

struct LossResult {
    double loss = 0.0;
    Tensor grad;
};

/// Mean softmax cross-entropy over the batch; targets are class indices.
LossResult softmax_cross_entropy(const Tensor& logits, const Tensor& targets);

/// Mean squared error over all elements.
LossResult mse_loss(const Tensor& outputs, const Tensor& targets);

LossResult task_loss(const Tensor& outputs, const Tensor& targets, Task task);

struct QatOptions {
    int epochs = 10;
    /// Toy-scale default; large models want far smaller rates.
    double learning_rate = 1e-2;
    /// The rate is multiplied by lr_decay every lr_step_epochs epochs.
    int lr_step_epochs = 5;
    double lr_decay = 0.1;
    std::int64_t batch_size = 32;
    std::uint64_t seed = 0;
    bool shuffle = true;
    /// Re-derive non-frozen weight encodings after every step.
    bool refresh_param_encodings = true;
    /// Recalibrate activation ranges on the training set after every epoch.
    bool refresh_activation_ranges = true;
    std::optional<std::filesystem::path> log_csv;

    void validate() const;
};

struct QatEpoch {
    int epoch = 0;
    double learning_rate = 0.0;
    double loss = 0.0;
    /// Accuracy or negative MSE on the evaluation set (training set if none).
    double metric = 0.0;
};

struct QatReport {
    std::vector<QatEpoch> epochs;
};

/// Learning rate for a zero-based epoch under the step schedule.
double scheduled_lr(const QatOptions& options, int epoch);

/// Deterministic sample order for one epoch.
std::vector<std::int64_t> epoch_order(std::int64_t n, std::uint64_t seed, int epoch, bool shuffle);

/// Trains the weights and biases of `sim` with SGD through the simulated
/// quantizers. The sim must hold encodings for every enabled quantizer.
QatReport qat_train(QuantSimModel& sim, const Dataset& train, const QatOptions& options,
                    const Dataset* eval = nullptr);

/// The same loop on a plain floating-point graph.
QatReport fp32_train(GraphModel& model, const Dataset& train, const QatOptions& options,
                     const Dataset* eval = nullptr);

/// Mean task loss and score of a model over a dataset, batch by batch.
std::pair<double, double> evaluate(const QuantSimModel& sim, const Dataset& data, std::int64_t batch_size = 256);
std::pair<double, double> evaluate(const GraphModel& model, const Dataset& data, std::int64_t batch_size = 256);

}  // namespace fixquant
