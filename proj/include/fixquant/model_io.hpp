// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fixquant/graph.hpp"

namespace fixquant {

// Model files: a JSON manifest plus a little-endian float32 blob.
//
//   {"format": "fixquant-model", "version": 1, "weights_file": "net.bin",
//    "nodes":   [{"name", "kind", "inputs", "attrs", "params": {role: tensor}}],
//    "tensors": [{"name", "shape", "offset", "nbytes"}]}
//
// offset and nbytes are byte counts into the blob. Tensors are laid out in node
// order, parameters of a node in role order.

struct SerializedModel {
    nlohmann::json manifest;
    std::vector<unsigned char> blob;
};

SerializedModel serialize_model(const GraphModel& graph, const std::string& weights_file);
GraphModel deserialize_model(const nlohmann::json& manifest, std::span<const unsigned char> blob);

/// Reads the manifest and the blob it names (relative to the manifest).
GraphModel load_model(const std::filesystem::path& manifest_path);

/// Writes <path> and a sibling blob named after the manifest stem.
void save_model(const GraphModel& graph, const std::filesystem::path& manifest_path);

std::vector<unsigned char> encode_float32(std::span<const double> values);
std::vector<double> decode_float32(std::span<const unsigned char> bytes);

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
std::vector<unsigned char> read_bytes(const std::filesystem::path& path);

enum class Task { classification, regression };

/// Samples stacked along axis 0. Classification targets hold class indices.
struct Dataset {
    Task task = Task::classification;
    std::int64_t num_classes = 0;
    Tensor inputs;
    Tensor targets;

    std::int64_t size() const { return inputs.empty() ? 0 : inputs.dim(0); }
};

// Dataset files follow the model conventions:
//   {"format": "fixquant-dataset", "version": 1, "task", "num_classes",
//    "num_samples", "input_shape", "target_shape", "data_file",
//    "inputs": {"offset", "nbytes"}, "targets": {"offset", "nbytes"}}
Dataset load_dataset(const std::filesystem::path& manifest_path);
void save_dataset(const Dataset& data, const std::filesystem::path& manifest_path);

/// Rows [begin, begin + count) of a tensor batched along axis 0.
Tensor slice_rows(const Tensor& t, std::int64_t begin, std::int64_t count);

/// Rows picked by index, in the given order.
Tensor gather_rows(const Tensor& t, std::span<const std::int64_t> rows);

/// Consecutive batches of `batch_size` rows (the last one may be shorter).
std::vector<Tensor> make_batches(const Tensor& t, std::int64_t batch_size, std::int64_t limit = -1);

/// Higher is better: accuracy for classification, negative MSE for regression.
double score(const Tensor& outputs, const Tensor& targets, Task task);

}  // namespace fixquant
