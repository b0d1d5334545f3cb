// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fixquant/error.hpp"

namespace fixquant {

std::int64_t QuantEncoding::int_min() const {
    return is_signed ? -(std::int64_t{1} << (bitwidth - 1)) : 0;
}

std::int64_t QuantEncoding::int_max() const {
    return is_signed ? (std::int64_t{1} << (bitwidth - 1)) - 1 : (std::int64_t{1} << bitwidth) - 1;
}

double QuantEncoding::grid_min() const { return scale * static_cast<double>(int_min() - zero_point); }

double QuantEncoding::grid_max() const { return scale * static_cast<double>(int_max() - zero_point); }

void QuantEncoding::validate() const {
    if (bitwidth < 2 || bitwidth > 32) throw UsageError("bitwidth must be in [2, 32], got " + std::to_string(bitwidth));
    if (!(scale > 0.0) || !std::isfinite(scale)) throw UsageError("scale must be positive and finite");
    if (symmetric && zero_point != 0) throw UsageError("symmetric encoding requires zero_point == 0");
    if (zero_point < int_min() || zero_point > int_max()) {
        throw UsageError("zero_point " + std::to_string(zero_point) + " outside integer grid");
    }
}

double round_half_away(double x) { return std::round(x); }

std::int64_t quantize_value(double x, const QuantEncoding& e) {
    const double q = round_half_away(x / e.scale) + static_cast<double>(e.zero_point);
    return static_cast<std::int64_t>(
        std::clamp(q, static_cast<double>(e.int_min()), static_cast<double>(e.int_max())));
}

double dequantize_value(std::int64_t q, const QuantEncoding& e) {
    return e.scale * static_cast<double>(q - e.zero_point);
}

double qdq_value(double x, const QuantEncoding& e) { return dequantize_value(quantize_value(x, e), e); }

IntTensor quantize_int(const Tensor& x, const QuantEncoding& e) {
    e.validate();
    require_finite(x, "quantize_int input");
    IntTensor out(x.shape());
    const auto xv = x.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = quantize_value(xv[i], e);
    return out;
}

Tensor dequantize(const IntTensor& xi, const QuantEncoding& e) {
    e.validate();
    Tensor out(xi.shape());
    const auto iv = xi.values();
    auto ov = out.values();
    for (std::size_t i = 0; i < iv.size(); ++i) {
        if (iv[i] < e.int_min() || iv[i] > e.int_max()) {
            throw DataError("integer value " + std::to_string(iv[i]) + " is off the " + std::to_string(e.bitwidth) +
                            "-bit grid");
        }
        ov[i] = dequantize_value(iv[i], e);
    }
    return out;
}

Tensor qdq(const Tensor& x, const QuantEncoding& e) {
    e.validate();
    require_finite(x, "qdq input");
    Tensor out = x;
    for (auto& v : out.values()) v = qdq_value(v, e);
    return out;
}

ChannelLayout channel_layout(const Shape& shape, int axis) {
    const int rank = static_cast<int>(shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw DataError("channel axis out of range for " + shape_to_string(shape));
    ChannelLayout l;
    for (int d = 0; d < axis; ++d) l.outer *= shape[static_cast<std::size_t>(d)];
    l.channels = shape[static_cast<std::size_t>(axis)];
    for (int d = axis + 1; d < rank; ++d) l.inner *= shape[static_cast<std::size_t>(d)];
    return l;
}

Tensor qdq(const Tensor& x, const QuantizerSpec& spec) {
    if (!spec.enabled) return x;
    if (!spec.per_channel()) {
        if (spec.encodings.size() != 1) throw DataError("per-tensor quantizer needs exactly one encoding");
        return qdq(x, spec.encodings.front());
    }
    const auto layout = channel_layout(x.shape(), *spec.channel_axis);
    if (static_cast<std::int64_t>(spec.encodings.size()) != layout.channels) {
        throw DataError("per-channel quantizer has " + std::to_string(spec.encodings.size()) +
                        " encodings for " + std::to_string(layout.channels) + " channels");
    }
    for (const auto& e : spec.encodings) e.validate();
    require_finite(x, "qdq input");
    Tensor out = x;
    auto ov = out.values();
    for (std::int64_t o = 0; o < layout.outer; ++o) {
        for (std::int64_t c = 0; c < layout.channels; ++c) {
            const auto& e = spec.encodings[static_cast<std::size_t>(c)];
            const auto base = (o * layout.channels + c) * layout.inner;
            for (std::int64_t i = 0; i < layout.inner; ++i) ov[base + i] = qdq_value(ov[base + i], e);
        }
    }
    return out;
}

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw NumericError("integer accumulator overflow");
    return r;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw NumericError("integer accumulator overflow");
    return r;
}

struct MatDims {
    std::int64_t rows, inner, cols;
};

MatDims integer_dims(const IntTensor& w, const IntTensor& x) {
    if (w.rank() != 2) throw DataError("integer weight must be rank 2");
    if (x.rank() != 1 && x.rank() != 2) throw DataError("integer input must be rank 1 or 2");
    if (x.dim(0) != w.dim(1)) {
        throw DataError("integer matmul inner dimensions differ: " + shape_to_string(w.shape()) + " x " +
                        shape_to_string(x.shape()));
    }
    return {w.dim(0), w.dim(1), x.rank() == 2 ? x.dim(1) : 1};
}

void require_on_grid(const IntTensor& t, const QuantEncoding& e, const char* what) {
    for (auto v : t.values()) {
        if (v < e.int_min() || v > e.int_max()) throw DataError(std::string(what) + " has values off its grid");
    }
}

}  // namespace

Tensor integer_matmul_asymmetric(const IntTensor& w, const IntTensor& x, const QuantEncoding& ew,
                                 const QuantEncoding& ex) {
    ew.validate();
    ex.validate();
    const auto d = integer_dims(w, x);
    require_on_grid(w, ew, "weight");
    require_on_grid(x, ex, "input");
    const auto wv = w.values();
    const auto xv = x.values();

    // Data-independent terms: z_x * (W 1) and K z_w z_x fold into the bias.
    std::vector<std::int64_t> w_row_sum(static_cast<std::size_t>(d.rows), 0);
    for (std::int64_t r = 0; r < d.rows; ++r)
        for (std::int64_t k = 0; k < d.inner; ++k) w_row_sum[r] = checked_add(w_row_sum[r], wv[r * d.inner + k]);
    const std::int64_t zz = checked_mul(checked_mul(d.inner, ew.zero_point), ex.zero_point);

    Tensor out(x.rank() == 2 ? Shape{d.rows, d.cols} : Shape{d.rows});
    auto ov = out.values();
    const double scale = ew.scale * ex.scale;
    for (std::int64_t c = 0; c < d.cols; ++c) {
        std::int64_t x_sum = 0;
        for (std::int64_t k = 0; k < d.inner; ++k) x_sum = checked_add(x_sum, xv[k * d.cols + c]);
        const std::int64_t zw_x = checked_mul(ew.zero_point, x_sum);
        for (std::int64_t r = 0; r < d.rows; ++r) {
            std::int64_t acc = 0;
            for (std::int64_t k = 0; k < d.inner; ++k)
                acc = checked_add(acc, checked_mul(wv[r * d.inner + k], xv[k * d.cols + c]));
            acc = checked_add(acc, -zw_x);
            acc = checked_add(acc, -checked_mul(ex.zero_point, w_row_sum[r]));
            acc = checked_add(acc, zz);
            ov[r * d.cols + c] = scale * static_cast<double>(acc);
        }
    }
    return out;
}

IntTensor integer_mac(const IntTensor& w, const IntTensor& x, const IntTensor& bias, const QuantEncoding& ew,
                      const QuantEncoding& ex) {
    ew.validate();
    ex.validate();
    if (ew.zero_point != 0) throw UsageError("integer_mac requires a symmetric weight encoding (z_w == 0)");
    const auto d = integer_dims(w, x);
    require_on_grid(w, ew, "weight");
    require_on_grid(x, ex, "input");
    if (bias.size() != d.rows) throw DataError("bias must hold one value per output row");

    constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
    constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
    auto fits = [&](std::int64_t v) {
        if (v < lo || v > hi) throw NumericError("32-bit accumulator overflow");
        return v;
    };

    const auto wv = w.values();
    const auto xv = x.values();
    IntTensor acc(x.rank() == 2 ? Shape{d.rows, d.cols} : Shape{d.rows});
    auto av = acc.values();
    for (std::int64_t r = 0; r < d.rows; ++r) {
        // Zero-point correction is known ahead of time and joins the bias.
        std::int64_t row_sum = 0;
        for (std::int64_t k = 0; k < d.inner; ++k) row_sum = checked_add(row_sum, wv[r * d.inner + k]);
        const std::int64_t init = fits(checked_add(bias[r], -fits(checked_mul(ex.zero_point, row_sum))));
        for (std::int64_t c = 0; c < d.cols; ++c) {
            std::int64_t a = init;
            for (std::int64_t k = 0; k < d.inner; ++k) a = fits(checked_add(a, checked_mul(wv[r * d.inner + k], xv[k * d.cols + c])));
            av[r * d.cols + c] = a;
        }
    }
    return acc;
}

IntTensor quantize_bias(const Tensor& bias, double accumulator_scale) {
    if (!(accumulator_scale > 0.0)) throw UsageError("accumulator scale must be positive");
    require_finite(bias, "bias");
    IntTensor out(bias.shape());
    auto ov = out.values();
    const auto bv = bias.values();
    for (std::size_t i = 0; i < bv.size(); ++i) {
        const double q = round_half_away(bv[i] / accumulator_scale);
        if (q < std::numeric_limits<std::int32_t>::min() || q > std::numeric_limits<std::int32_t>::max()) {
            throw NumericError("bias does not fit a 32-bit accumulator");
        }
        ov[i] = static_cast<std::int64_t>(q);
    }
    return out;
}

Tensor dequantize_accumulator(const IntTensor& acc, double accumulator_scale) {
    Tensor out(acc.shape());
    auto ov = out.values();
    const auto av = acc.values();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = accumulator_scale * static_cast<double>(av[i]);
    return out;
}

}  // namespace fixquant
