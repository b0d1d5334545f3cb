// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/range_setting.hpp"

#include <algorithm>
#include <array>
#include <cfloat>
#include <cmath>
#include <limits>

#include "fixquant/error.hpp"

namespace fixquant {

std::string_view to_string(RangeKind kind) { return kind == RangeKind::sqnr ? "sqnr" : "min_max"; }

RangeKind parse_range_kind(std::string_view name) {
    if (name == "min_max" || name == "minmax" || name == "tf") return RangeKind::min_max;
    if (name == "sqnr" || name == "tf_enhanced") return RangeKind::sqnr;
    throw UsageError("unknown range scheme '" + std::string(name) + "'");
}

namespace {

constexpr int kMinExponent = -200;

std::int64_t bin_index(double x, int exponent) { return static_cast<std::int64_t>(std::floor(std::ldexp(x, -exponent))); }

// Smallest exponent at which [lo, hi] fits into max_bins bins.
int exponent_for_range(double lo, double hi, int max_bins) {
    const double max_abs = std::max(std::abs(lo), std::abs(hi));
    int e = kMinExponent;
    if (max_abs > 0.0) e = std::max(e, static_cast<int>(std::ceil(std::log2(max_abs))) - 50);
    if (hi > lo) e = std::max(e, static_cast<int>(std::floor(std::log2((hi - lo) / max_bins))));
    while (bin_index(hi, e) - bin_index(lo, e) + 1 > max_bins) ++e;
    return e;
}

}  // namespace

Histogram::Histogram(int max_bins) : max_bins_(max_bins) {
    if (max_bins < 2) throw UsageError("histogram needs at least 2 bins");
}

double Histogram::bin_width() const { return std::ldexp(1.0, exponent_); }

void Histogram::add_batch(std::span<const double> values) {
    if (values.empty()) return;
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double mn = *mn_it, mx = *mx_it;
    if (!std::isfinite(mn) || !std::isfinite(mx)) throw NumericError("non-finite value observed during calibration");

    Histogram local(max_bins_);
    local.exponent_ = exponent_for_range(mn, mx, max_bins_);
    local.first_ = bin_index(mn, local.exponent_);
    const auto n_bins = bin_index(mx, local.exponent_) - local.first_ + 1;
    local.counts_.assign(static_cast<std::size_t>(n_bins), 0);
    local.sums_.assign(static_cast<std::size_t>(n_bins), 0.0);
    local.sums_sq_.assign(static_cast<std::size_t>(n_bins), 0.0);
    for (double v : values) {
        const auto k = static_cast<std::size_t>(bin_index(v, local.exponent_) - local.first_);
        local.counts_[k] += 1;
        local.sums_[k] += v;
        local.sums_sq_[k] += v * v;
    }
    local.total_ = static_cast<std::int64_t>(values.size());
    merge(local);
}

namespace {

std::int64_t shift_floor(std::int64_t k, int shift) {
    if (shift <= 0) return k;
    if (shift >= 63) return k < 0 ? -1 : 0;
    return k >> shift;
}

}  // namespace

void Histogram::coarsen_to(int exponent) {
    if (exponent <= exponent_ || counts_.empty()) {
        exponent_ = std::max(exponent_, exponent);
        return;
    }
    const int shift = exponent - exponent_;
    const auto new_first = shift_floor(first_, shift);
    const auto new_last = shift_floor(first_ + bin_count() - 1, shift);
    std::vector<std::int64_t> counts(static_cast<std::size_t>(new_last - new_first + 1), 0);
    std::vector<double> sums(counts.size(), 0.0), sums_sq(counts.size(), 0.0);
    for (std::int64_t i = 0; i < bin_count(); ++i) {
        const auto k = static_cast<std::size_t>(shift_floor(first_ + i, shift) - new_first);
        counts[k] += counts_[static_cast<std::size_t>(i)];
        sums[k] += sums_[static_cast<std::size_t>(i)];
        sums_sq[k] += sums_sq_[static_cast<std::size_t>(i)];
    }
    counts_ = std::move(counts);
    sums_ = std::move(sums);
    sums_sq_ = std::move(sums_sq);
    first_ = new_first;
    exponent_ = exponent;
}

void Histogram::merge(const Histogram& other) {
    if (other.counts_.empty()) return;
    Histogram rhs = other;
    if (counts_.empty()) exponent_ = rhs.exponent_;
    const std::array<const Histogram*, 2> parts{this, &rhs};
    auto span_at = [&](int exp) {
        auto lo = std::numeric_limits<std::int64_t>::max();
        auto hi = std::numeric_limits<std::int64_t>::min();
        for (const Histogram* h : parts) {
            if (h->counts_.empty()) continue;
            lo = std::min(lo, shift_floor(h->first_, exp - h->exponent_));
            hi = std::max(hi, shift_floor(h->first_ + h->bin_count() - 1, exp - h->exponent_));
        }
        return hi - lo + 1;
    };
    int e = std::max(exponent_, rhs.exponent_);
    while (span_at(e) > max_bins_) ++e;
    coarsen_to(e);
    rhs.coarsen_to(e);

    auto lo = std::numeric_limits<std::int64_t>::max();
    auto hi = std::numeric_limits<std::int64_t>::min();
    for (const Histogram* h : parts) {
        if (h->counts_.empty()) continue;
        lo = std::min(lo, h->first_);
        hi = std::max(hi, h->first_ + h->bin_count() - 1);
    }
    std::vector<std::int64_t> counts(static_cast<std::size_t>(hi - lo + 1), 0);
    std::vector<double> sums(counts.size(), 0.0), sums_sq(counts.size(), 0.0);
    for (const Histogram* h : parts) {
        for (std::int64_t i = 0; i < h->bin_count(); ++i) {
            const auto k = static_cast<std::size_t>(h->first_ + i - lo);
            counts[k] += h->counts_[static_cast<std::size_t>(i)];
            sums[k] += h->sums_[static_cast<std::size_t>(i)];
            sums_sq[k] += h->sums_sq_[static_cast<std::size_t>(i)];
        }
    }
    counts_ = std::move(counts);
    sums_ = std::move(sums);
    sums_sq_ = std::move(sums_sq);
    first_ = lo;
    total_ += rhs.total_;
}

std::vector<Histogram::Bin> Histogram::nonempty_bins() const {
    std::vector<Bin> bins;
    for (std::int64_t i = 0; i < bin_count(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (counts_[k] == 0) continue;
        bins.push_back({std::ldexp(static_cast<double>(first_ + i), exponent_),
                        std::ldexp(static_cast<double>(first_ + i + 1), exponent_), counts_[k], sums_[k],
                        sums_sq_[k]});
    }
    return bins;
}

void ChannelStats::observe(std::span<const double> values) {
    if (values.empty()) return;
    ChannelStats batch;
    batch.histogram = Histogram(histogram.max_bins());
    const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
    batch.min = *mn;
    batch.max = *mx;
    batch.count = static_cast<std::int64_t>(values.size());
    batch.histogram.add_batch(values);
    merge(batch);
}

void ChannelStats::merge(const ChannelStats& other) {
    if (other.count == 0) return;
    if (count == 0) {
        min = other.min;
        max = other.max;
    } else {
        min = std::min(min, other.min);
        max = std::max(max, other.max);
    }
    count += other.count;
    histogram.merge(other.histogram);
}

RangeAccumulator::RangeAccumulator(std::optional<int> channel_axis, int max_bins)
    : channel_axis_(channel_axis), max_bins_(max_bins) {}

void RangeAccumulator::observe(const Tensor& x) {
    if (x.empty()) return;
    if (!x.all_finite()) throw NumericError("non-finite value observed during calibration");
    if (!channel_axis_) {
        if (channels_.empty()) channels_.push_back(ChannelStats{0.0, 0.0, 0, Histogram(max_bins_)});
        channels_[0].observe(x.values());
        return;
    }
    const auto layout = channel_layout(x.shape(), *channel_axis_);
    if (channels_.empty()) {
        channels_.assign(static_cast<std::size_t>(layout.channels), ChannelStats{0.0, 0.0, 0, Histogram(max_bins_)});
    } else if (static_cast<std::int64_t>(channels_.size()) != layout.channels) {
        throw DataError("observed tensor has " + std::to_string(layout.channels) + " channels, expected " +
                        std::to_string(channels_.size()));
    }
    const auto xv = x.values();
    std::vector<double> slice;
    for (std::int64_t c = 0; c < layout.channels; ++c) {
        slice.clear();
        for (std::int64_t o = 0; o < layout.outer; ++o) {
            const auto base = (o * layout.channels + c) * layout.inner;
            slice.insert(slice.end(), xv.begin() + base, xv.begin() + base + layout.inner);
        }
        channels_[static_cast<std::size_t>(c)].observe(slice);
    }
}

void RangeAccumulator::merge(const RangeAccumulator& other) {
    if (other.channel_axis_ != channel_axis_) throw DataError("cannot merge per-tensor and per-channel statistics");
    if (other.channels_.empty()) return;
    if (channels_.empty()) {
        channels_ = other.channels_;
        return;
    }
    if (channels_.size() != other.channels_.size()) throw DataError("cannot merge statistics with different channels");
    for (std::size_t c = 0; c < channels_.size(); ++c) channels_[c].merge(other.channels_[c]);
}

bool RangeAccumulator::empty() const {
    return std::all_of(channels_.begin(), channels_.end(), [](const ChannelStats& s) { return s.count == 0; }) ||
           channels_.empty();
}

QuantEncoding encoding_from_range(double qmin, double qmax, int bitwidth, bool symmetric) {
    if (bitwidth < 2 || bitwidth > 32) throw UsageError("bitwidth must be in [2, 32], got " + std::to_string(bitwidth));
    if (!std::isfinite(qmin) || !std::isfinite(qmax) || qmin > qmax) throw NumericError("invalid quantization range");
    // Rounded up to float32 so the grid still spans the requested range.
    auto as_float = [](double s) {
        float f = static_cast<float>(s);
        if (static_cast<double>(f) < s) f = std::nextafter(f, std::numeric_limits<float>::infinity());
        return std::max(static_cast<double>(f), double{FLT_MIN});
    };
    QuantEncoding e;
    e.bitwidth = bitwidth;
    e.symmetric = symmetric;
    if (symmetric) {
        const double abs_max = std::max(std::abs(qmin), std::abs(qmax));
        e.is_signed = true;
        e.zero_point = 0;
        e.scale = as_float(abs_max / static_cast<double>((std::int64_t{1} << (bitwidth - 1)) - 1));
        return e;
    }
    const double lo = std::min(qmin, 0.0);
    const double hi = std::max(qmax, 0.0);
    const double levels = static_cast<double>((std::int64_t{1} << bitwidth) - 1);
    e.is_signed = false;
    e.scale = as_float((hi - lo) / levels);
    e.zero_point = static_cast<std::int64_t>(std::clamp(round_half_away(-lo / e.scale), 0.0, levels));
    return e;
}

std::pair<double, double> effective_range(const ChannelStats& stats) {
    if (stats.count == 0) throw UsageError("range setting needs at least one observation");
    double lo = stats.min, hi = stats.max;
    if (lo == hi) {
        lo = lo - 0.5 * std::abs(lo) - kDegenerateRangeEpsilon;
        hi = hi + 0.5 * std::abs(hi) + kDegenerateRangeEpsilon;
    }
    return {lo, hi};
}

QuantEncoding compute_minmax(const ChannelStats& stats, int bitwidth, bool symmetric) {
    const auto [lo, hi] = effective_range(stats);
    return encoding_from_range(lo, hi, bitwidth, symmetric);
}

namespace {

double bins_mse(const std::vector<Histogram::Bin>& bins, std::int64_t total, const QuantEncoding& e,
                double clip_weight) {
    if (total == 0) return 0.0;
    const double gmin = e.grid_min(), gmax = e.grid_max();
    double sum = 0.0;
    for (const auto& bin : bins) {
        // Values of a bin are represented by their mean: the spread term is
        // exact, the rounding term is exact when the bin lies in one cell.
        const double n = static_cast<double>(bin.count);
        const double mean = bin.sum / n;
        const double spread = std::max(0.0, bin.sum_sq - bin.sum * mean);
        const double q = qdq_value(mean, e);
        const double err = spread + n * (mean - q) * (mean - q);
        sum += (mean < gmin || mean > gmax) ? clip_weight * err : err;
    }
    return sum / static_cast<double>(total);
}

}  // namespace

double histogram_mse(const Histogram& h, const QuantEncoding& e, double clip_weight) {
    return bins_mse(h.nonempty_bins(), h.total_count(), e, clip_weight);
}

SqnrResult sqnr_search(const ChannelStats& stats, int bitwidth, bool symmetric, const SqnrOptions& options) {
    if (options.num_steps < 2) throw UsageError("SQNR search grid needs at least 2 steps");
    const auto [lo, hi] = effective_range(stats);
    const auto bins = stats.histogram.nonempty_bins();
    SqnrResult best;
    best.estimated_mse = std::numeric_limits<double>::infinity();
    auto consider = [&](double qmin, double qmax) {
        const auto e = encoding_from_range(qmin, qmax, bitwidth, symmetric);
        const double mse = bins_mse(bins, stats.histogram.total_count(), e, options.clip_weight);
        ++best.candidates_evaluated;
        if (mse < best.estimated_mse) {
            best.encoding = e;
            best.qmin = qmin;
            best.qmax = qmax;
            best.estimated_mse = mse;
        }
    };
    const int n = options.num_steps;
    if (symmetric) {
        const double abs_max = std::max(std::abs(lo), std::abs(hi));
        for (int j = 0; j < n; ++j) {
            const double m = abs_max * (1.0 - static_cast<double>(j) / n);
            consider(-m, m);
        }
    } else {
        const double step = (hi - lo) / n;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; i + j < n; ++j) consider(lo + i * step, hi - j * step);
        }
    }
    return best;
}

QuantEncoding compute_sqnr(const ChannelStats& stats, int bitwidth, bool symmetric, const SqnrOptions& options) {
    return sqnr_search(stats, bitwidth, symmetric, options).encoding;
}

std::vector<QuantEncoding> compute_encodings(const RangeAccumulator& acc, RangeKind kind, int bitwidth,
                                             bool symmetric, const SqnrOptions& options) {
    if (acc.channels().empty()) throw UsageError("range setting needs at least one observation");
    std::vector<QuantEncoding> out;
    out.reserve(acc.channels().size());
    for (const auto& ch : acc.channels()) {
        out.push_back(kind == RangeKind::sqnr ? compute_sqnr(ch, bitwidth, symmetric, options)
                                              : compute_minmax(ch, bitwidth, symmetric));
    }
    return out;
}

}  // namespace fixquant
