// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fixquant {

using Shape = std::vector<std::int64_t>;

/// Number of elements described by `shape`; 1 for a rank-0 shape.
std::int64_t numel(const Shape& shape);

std::string shape_to_string(const Shape& shape);

/// Dense row-major real tensor.
///
/// Values are held in double precision. A default-constructed tensor is
/// "empty" (no shape, no data) and is used to mark absent optional inputs
/// such as a missing bias.
class Tensor {
public:
    Tensor() = default;

    /// Zero-filled tensor of the given shape. Every extent must be positive.
    explicit Tensor(Shape shape);

    Tensor(Shape shape, std::vector<double> data);

    static Tensor filled(Shape shape, double value);

    bool empty() const noexcept { return shape_.empty() && data_.empty(); }

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int axis) const;
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

    std::span<const double> values() const noexcept { return data_; }
    std::span<double> values() noexcept { return data_; }

    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    double at(std::initializer_list<std::int64_t> index) const;
    double& at(std::initializer_list<std::int64_t> index);

    /// Same data viewed under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;

    /// Rounds every element to the nearest float32 value.
    Tensor rounded_to_float() const;

    bool operator==(const Tensor& other) const = default;

private:
    std::size_t offset(std::initializer_list<std::int64_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

/// Dense row-major integer tensor; wide enough for any grid up to 32 bits
/// and for 32-bit accumulators.
class IntTensor {
public:
    IntTensor() = default;
    explicit IntTensor(Shape shape);
    IntTensor(Shape shape, std::vector<std::int64_t> data);

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int axis) const;
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

    std::span<const std::int64_t> values() const noexcept { return data_; }
    std::span<std::int64_t> values() noexcept { return data_; }

    std::int64_t operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    std::int64_t& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }

    bool operator==(const IntTensor& other) const = default;

private:
    Shape shape_;
    std::vector<std::int64_t> data_;
};

/// Throws NumericError naming `where` if any element is NaN or infinite.
void require_finite(const Tensor& t, const std::string& where);

}  // namespace fixquant
