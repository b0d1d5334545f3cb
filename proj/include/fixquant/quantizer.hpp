// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fixquant/tensor.hpp"

namespace fixquant {

/// One uniform quantizer: scale s, integer zero-point z and bit-width b.
///
/// Unsigned grids span [0, 2^b - 1], signed grids [-2^(b-1), 2^(b-1) - 1].
/// Symmetric encodings pin z to 0. The zero-point always lies on the integer
/// grid, so real zero quantizes without error.
struct QuantEncoding {
    double scale = 1.0;
    std::int64_t zero_point = 0;
    int bitwidth = 8;
    bool is_signed = false;
    bool symmetric = false;

    std::int64_t int_min() const;
    std::int64_t int_max() const;

    /// Smallest representable real value, s * (int_min - z).
    double grid_min() const;
    /// Largest representable real value, s * (int_max - z).
    double grid_max() const;

    /// Throws UsageError when the invariants above do not hold.
    void validate() const;

    bool operator==(const QuantEncoding&) const = default;
};

/// Per-tensor (one encoding) or per-channel (one encoding per slice along
/// channel_axis) quantizer parameters.
struct QuantizerSpec {
    std::vector<QuantEncoding> encodings;
    std::optional<int> channel_axis;
    bool enabled = true;

    bool per_channel() const { return channel_axis.has_value(); }

    static QuantizerSpec per_tensor(const QuantEncoding& e) { return {{e}, std::nullopt, true}; }

    bool operator==(const QuantizerSpec&) const = default;
};

/// Round half away from zero. Used by every quantization path.
double round_half_away(double x);

std::int64_t quantize_value(double x, const QuantEncoding& e);
double dequantize_value(std::int64_t q, const QuantEncoding& e);
double qdq_value(double x, const QuantEncoding& e);

/// x_int = clamp(round(x / s) + z; int_min, int_max).
IntTensor quantize_int(const Tensor& x, const QuantEncoding& e);

/// s * (x_int - z). Throws DataError for values off the grid.
Tensor dequantize(const IntTensor& xi, const QuantEncoding& e);

/// Simulated quantization with a single encoding.
Tensor qdq(const Tensor& x, const QuantEncoding& e);

/// Simulated quantization; a disabled spec returns x unchanged.
Tensor qdq(const Tensor& x, const QuantizerSpec& spec);

/// Splits `shape` around `axis` into (outer, channels, inner) extents.
struct ChannelLayout {
    std::int64_t outer = 1;
    std::int64_t channels = 1;
    std::int64_t inner = 1;
};
ChannelLayout channel_layout(const Shape& shape, int axis);

/// Product of asymmetric quantized operands evaluated entirely in integer
/// arithmetic and scaled once at the end:
///   s_w s_x (W x - z_w sum(x) - z_x W 1 + K z_w z_x).
/// w: [N,K], x: [K] or [K,M]. Throws NumericError on int64 overflow.
Tensor integer_matmul_asymmetric(const IntTensor& w, const IntTensor& x, const QuantEncoding& ew,
                                 const QuantEncoding& ex);

/// Integer MAC with 32-bit accumulators initialised from the bias:
///   acc = bias - z_x W 1 + W x
/// The weight encoding must be symmetric. Dequantize with s_w * s_x.
/// Throws NumericError when any partial sum leaves the int32 range.
IntTensor integer_mac(const IntTensor& w, const IntTensor& x, const IntTensor& bias, const QuantEncoding& ew,
                      const QuantEncoding& ex);

/// Bias pre-quantised to the accumulator scale s_w * s_x.
IntTensor quantize_bias(const Tensor& bias, double accumulator_scale);

Tensor dequantize_accumulator(const IntTensor& acc, double accumulator_scale);

}  // namespace fixquant
