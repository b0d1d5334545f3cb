// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <string_view>

#include "fixquant/tensor.hpp"

namespace fixquant::kernels {

// Reference floating-point kernels. All accumulation is done in double in a
// fixed (row-major, ascending index) order, so results are bit-reproducible.
// Every kernel rejects non-finite results with NumericError.

/// a: [M,K]; b: [K,N] or [K]. Returns [M,N] or [M].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Fully connected layer. x is [N, ...] and is flattened to [N, in];
/// weight is [out, in]; bias is [out] or empty. Returns [N, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dParams {
    std::array<int, 2> stride{1, 1};
    std::array<int, 2> padding{0, 0};
    int groups = 1;
};

/// Direct cross-correlation with zero padding. x: NCHW, weight: OIHW with
/// I = C / groups, bias: [O] or empty.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dParams& params);

Shape conv2d_output_shape(const Shape& x, const Shape& weight, const Conv2dParams& params);

struct Pool2dParams {
    std::array<int, 2> kernel{2, 2};
    std::array<int, 2> stride{2, 2};
};

Tensor max_pool2d(const Tensor& x, const Pool2dParams& params);
Tensor avg_pool2d(const Tensor& x, const Pool2dParams& params);
Shape pool2d_output_shape(const Shape& x, const Pool2dParams& params);

Tensor relu(const Tensor& x);
Tensor relu6(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor concat(std::span<const Tensor> inputs, int axis);

/// Inference batch normalisation over axis 1: gamma*(x-mean)/sqrt(var+eps)+beta.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                  const Tensor& var, double eps = 1e-5);

enum class ElementwiseKind { relu, relu6, add, concat, maxpool, avgpool, batchnorm };

ElementwiseKind parse_elementwise_kind(std::string_view name);

struct ElementwiseAttrs {
    int axis = 1;
    Pool2dParams pool{};
    double eps = 1e-5;
};

/// Dispatches to the kernel for `kind`. batchnorm expects inputs
/// {x, gamma, beta, mean, var}.
Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> inputs, const ElementwiseAttrs& attrs = {});

}  // namespace fixquant::kernels
