// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fixquant/error.hpp"

namespace fixquant {

std::string_view to_string(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::usage: return "usage";
        case ErrorCategory::data: return "data";
        case ErrorCategory::numeric: return "numeric";
    }
    return "unknown";
}

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    for (auto d : shape) {
        if (d <= 0) throw DataError("tensor extents must be positive, got " + shape_to_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(static_cast<std::size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw DataError("tensor shape " + shape_to_string(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::filled(Shape shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

std::int64_t Tensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw DataError("axis out of range for shape " + shape_to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::offset(std::initializer_list<std::int64_t> index) const {
    if (index.size() != shape_.size()) throw DataError("index rank mismatch for shape " + shape_to_string(shape_));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= shape_[axis]) throw DataError("index out of range for shape " + shape_to_string(shape_));
        off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return off;
}

double Tensor::at(std::initializer_list<std::int64_t> index) const { return data_[offset(index)]; }

double& Tensor::at(std::initializer_list<std::int64_t> index) { return data_[offset(index)]; }

Tensor Tensor::reshaped(Shape shape) const {
    if (numel(shape) != size()) {
        throw DataError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::rounded_to_float() const {
    Tensor out = *this;
    for (auto& v : out.data_) v = static_cast<double>(static_cast<float>(v));
    return out;
}

IntTensor::IntTensor(Shape shape) : shape_(std::move(shape)) {
    check_extents(shape_);
    data_.assign(static_cast<std::size_t>(numel(shape_)), 0);
}

IntTensor::IntTensor(Shape shape, std::vector<std::int64_t> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw DataError("int tensor shape " + shape_to_string(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
    }
}

std::int64_t IntTensor::dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw DataError("axis out of range for shape " + shape_to_string(shape_));
    return shape_[static_cast<std::size_t>(axis)];
}

void require_finite(const Tensor& t, const std::string& where) {
    if (!t.all_finite()) throw NumericError("non-finite value produced by " + where);
}

}  // namespace fixquant
