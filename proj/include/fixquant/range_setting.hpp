// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fixquant/quantizer.hpp"
#include "fixquant/tensor.hpp"

namespace fixquant {

enum class RangeKind { min_max, sqnr };

std::string_view to_string(RangeKind kind);
RangeKind parse_range_kind(std::string_view name);

struct RangeScheme {
    RangeKind kind = RangeKind::min_max;
    bool per_channel = false;
    int channel_axis = 0;
};

/// Histogram with power-of-two bin width anchored at zero.
///
/// Bin k covers [k w, (k+1) w) with w = 2^exponent. The exponent is the
/// smallest one that fits the observed range into max_bins bins, so a
/// histogram is a function of the observed multiset alone: merging is exact,
/// associative and commutative for the counts. Each bin also keeps the sum
/// and the sum of squares of its values, which lets the SQNR search evaluate
/// the quantization error of a bin exactly whenever all of its values fall
/// into one rounding cell.
class Histogram {
public:
    static constexpr int kDefaultBins = 2048;

    struct Bin {
        double lo = 0.0;
        double hi = 0.0;
        std::int64_t count = 0;
        double sum = 0.0;
        double sum_sq = 0.0;
    };

    explicit Histogram(int max_bins = kDefaultBins);

    void add_batch(std::span<const double> values);
    void merge(const Histogram& other);

    int max_bins() const noexcept { return max_bins_; }
    int exponent() const noexcept { return exponent_; }
    double bin_width() const;
    std::int64_t total_count() const noexcept { return total_; }
    std::int64_t bin_count() const noexcept { return static_cast<std::int64_t>(counts_.size()); }

    std::vector<Bin> nonempty_bins() const;

private:
    void coarsen_to(int exponent);

    int max_bins_;
    int exponent_ = 0;
    std::int64_t first_ = 0;
    std::int64_t total_ = 0;
    std::vector<std::int64_t> counts_;
    std::vector<double> sums_;
    std::vector<double> sums_sq_;
};

/// Running statistics of one tensor or of one channel.
struct ChannelStats {
    double min = 0.0;
    double max = 0.0;
    std::int64_t count = 0;
    Histogram histogram;

    void observe(std::span<const double> values);
    void merge(const ChannelStats& other);
};

/// Calibration statistics for a tensor, per tensor or per channel.
class RangeAccumulator {
public:
    RangeAccumulator() : RangeAccumulator(std::nullopt) {}
    explicit RangeAccumulator(std::optional<int> channel_axis, int max_bins = Histogram::kDefaultBins);

    void observe(const Tensor& x);

    /// Combines statistics from another accumulator over the same tensor.
    void merge(const RangeAccumulator& other);

    bool empty() const;
    std::optional<int> channel_axis() const { return channel_axis_; }
    const std::vector<ChannelStats>& channels() const { return channels_; }

private:
    std::optional<int> channel_axis_;
    int max_bins_;
    std::vector<ChannelStats> channels_;
};

/// Encoding whose grid spans [qmin, qmax], widened to contain zero.
/// Symmetric encodings use a signed grid sized by max(|qmin|, |qmax|).
/// The scale is rounded to float32 precision before the zero-point is derived.
QuantEncoding encoding_from_range(double qmin, double qmax, int bitwidth, bool symmetric);

/// Observed [min, max] with the degenerate constant case widened to
/// [min - |min|/2 - eps, max + |max|/2 + eps].
std::pair<double, double> effective_range(const ChannelStats& stats);

inline constexpr double kDegenerateRangeEpsilon = 1e-6;

QuantEncoding compute_minmax(const ChannelStats& stats, int bitwidth, bool symmetric);

struct SqnrOptions {
    int num_steps = 100;
    /// Weight of the clipping term relative to the rounding term.
    double clip_weight = 1.0;
};

/// Estimated quantization MSE of the histogrammed data under `e`: a rounding
/// term for bins inside the grid plus a clip_weight-scaled clipping term.
double histogram_mse(const Histogram& h, const QuantEncoding& e, double clip_weight = 1.0);

struct SqnrResult {
    QuantEncoding encoding;
    double qmin = 0.0;
    double qmax = 0.0;
    double estimated_mse = 0.0;
    std::int64_t candidates_evaluated = 0;
};

/// Exhaustive search over clipped ranges. Asymmetric candidates shrink each
/// side of [min, max] by i and j steps of (max - min) / num_steps with
/// i + j < num_steps; symmetric candidates shrink max|x| by j steps.
/// The first candidate with the strictly smallest estimate wins, so data
/// with no benefit from clipping keeps the min-max range.
SqnrResult sqnr_search(const ChannelStats& stats, int bitwidth, bool symmetric, const SqnrOptions& options = {});

QuantEncoding compute_sqnr(const ChannelStats& stats, int bitwidth, bool symmetric, const SqnrOptions& options = {});

/// One encoding per channel of `acc` (a single one when per-tensor).
std::vector<QuantEncoding> compute_encodings(const RangeAccumulator& acc, RangeKind kind, int bitwidth,
                                             bool symmetric, const SqnrOptions& options = {});

}  // namespace fixquant
