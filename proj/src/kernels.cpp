// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fixquant/error.hpp"
#include "fixquant/parallel.hpp"

namespace fixquant::kernels {

namespace {

Tensor checked(Tensor t, const char* where) {
    require_finite(t, where);
    return t;
}

void require_rank(const Tensor& t, int rank, const char* what) {
    if (t.rank() != rank) {
        throw DataError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " +
                        shape_to_string(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul lhs");
    if (b.rank() != 1 && b.rank() != 2) throw DataError("matmul rhs must be rank 1 or 2");
    const auto m = a.dim(0);
    const auto k = a.dim(1);
    if (b.dim(0) != k) {
        throw DataError("matmul inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                        shape_to_string(b.shape()));
    }
    const auto n = b.rank() == 2 ? b.dim(1) : 1;
    Tensor out(b.rank() == 2 ? Shape{m, n} : Shape{m});
    const auto av = a.values();
    const auto bv = b.values();
    auto ov = out.values();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[p * n + j];
            ov[i * n + j] = acc;
        }
    }
    return checked(std::move(out), "matmul");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    require_rank(weight, 2, "linear weight");
    if (x.rank() < 1) throw DataError("linear input must have a batch axis");
    const auto batch = x.dim(0);
    const auto in = x.size() / batch;
    const auto out_features = weight.dim(0);
    if (weight.dim(1) != in) {
        throw DataError("linear weight " + shape_to_string(weight.shape()) + " incompatible with input " +
                        shape_to_string(x.shape()));
    }
    if (!bias.empty() && bias.size() != out_features) throw DataError("linear bias size mismatch");
    Tensor out(Shape{batch, out_features});
    const auto xv = x.values();
    const auto wv = weight.values();
    auto ov = out.values();
    parallel_for(batch, [&](std::int64_t n) {
        for (std::int64_t o = 0; o < out_features; ++o) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (std::int64_t i = 0; i < in; ++i) acc += xv[n * in + i] * wv[o * in + i];
            ov[n * out_features + o] = acc;
        }
    });
    return checked(std::move(out), "linear");
}

Shape conv2d_output_shape(const Shape& x, const Shape& weight, const Conv2dParams& p) {
    if (x.size() != 4 || weight.size() != 4) throw DataError("conv2d expects NCHW input and OIHW weight");
    if (p.groups < 1 || p.stride[0] < 1 || p.stride[1] < 1 || p.padding[0] < 0 || p.padding[1] < 0) {
        throw DataError("conv2d requires stride >= 1, padding >= 0, groups >= 1");
    }
    const auto c = x[1];
    const auto o = weight[0];
    if (c % p.groups != 0 || o % p.groups != 0 || weight[1] != c / p.groups) {
        throw DataError("conv2d channel mismatch: input " + shape_to_string(x) + ", weight " +
                        shape_to_string(weight) + ", groups " + std::to_string(p.groups));
    }
    const auto ho = (x[2] + 2 * p.padding[0] - weight[2]) / p.stride[0] + 1;
    const auto wo = (x[3] + 2 * p.padding[1] - weight[3]) / p.stride[1] + 1;
    if (x[2] + 2 * p.padding[0] < weight[2] || x[3] + 2 * p.padding[1] < weight[3]) {
        throw DataError("conv2d kernel larger than padded input");
    }
    return {x[0], o, ho, wo};
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dParams& p) {
    const Shape out_shape = conv2d_output_shape(x.shape(), weight.shape(), p);
    const auto n_batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto o = weight.dim(0), cg = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    const auto ho = out_shape[2], wo = out_shape[3];
    const auto og = o / p.groups;
    if (!bias.empty() && bias.size() != o) throw DataError("conv2d bias size mismatch");
    Tensor out(out_shape);
    const auto xv = x.values();
    const auto wv = weight.values();
    auto ov = out.values();
    parallel_for(n_batch * o, [&](std::int64_t job) {
        const auto n = job / o;
        const auto oc = job % o;
        const auto g = oc / og;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = bias.empty() ? 0.0 : bias[oc];
                for (std::int64_t ic = 0; ic < cg; ++ic) {
                    const auto in_c = g * cg + ic;
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        const auto iy = oy * p.stride[0] - p.padding[0] + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const auto ix = ox * p.stride[1] - p.padding[1] + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += xv[((n * c + in_c) * h + iy) * w + ix] * wv[((oc * cg + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                ov[((n * o + oc) * ho + oy) * wo + ox] = acc;
            }
        }
    });
    return checked(std::move(out), "conv2d");
}

Shape pool2d_output_shape(const Shape& x, const Pool2dParams& p) {
    if (x.size() != 4) throw DataError("pooling expects NCHW input, got " + shape_to_string(x));
    if (p.kernel[0] < 1 || p.kernel[1] < 1 || p.stride[0] < 1 || p.stride[1] < 1) {
        throw DataError("pooling kernel and stride must be >= 1");
    }
    if (x[2] < p.kernel[0] || x[3] < p.kernel[1]) throw DataError("pooling kernel larger than input");
    return {x[0], x[1], (x[2] - p.kernel[0]) / p.stride[0] + 1, (x[3] - p.kernel[1]) / p.stride[1] + 1};
}

namespace {

template <typename Reduce>
Tensor pool2d(const Tensor& x, const Pool2dParams& p, Reduce reduce, const char* name) {
    const Shape out_shape = pool2d_output_shape(x.shape(), p);
    const auto planes = x.dim(0) * x.dim(1);
    const auto h = x.dim(2), w = x.dim(3);
    const auto ho = out_shape[2], wo = out_shape[3];
    Tensor out(out_shape);
    const auto xv = x.values();
    auto ov = out.values();
    for (std::int64_t pl = 0; pl < planes; ++pl) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                ov[(pl * ho + oy) * wo + ox] =
                    reduce(xv.subspan(static_cast<std::size_t>(pl * h * w)), oy * p.stride[0], ox * p.stride[1], w);
            }
        }
    }
    return checked(std::move(out), name);
}

}  // namespace

Tensor max_pool2d(const Tensor& x, const Pool2dParams& p) {
    return pool2d(
        x, p,
        [&](std::span<const double> plane, std::int64_t y0, std::int64_t x0, std::int64_t w) {
            double best = -std::numeric_limits<double>::infinity();
            for (int ky = 0; ky < p.kernel[0]; ++ky)
                for (int kx = 0; kx < p.kernel[1]; ++kx) best = std::max(best, plane[(y0 + ky) * w + x0 + kx]);
            return best;
        },
        "maxpool");
}

Tensor avg_pool2d(const Tensor& x, const Pool2dParams& p) {
    const double inv = 1.0 / (p.kernel[0] * p.kernel[1]);
    return pool2d(
        x, p,
        [&](std::span<const double> plane, std::int64_t y0, std::int64_t x0, std::int64_t w) {
            double acc = 0.0;
            for (int ky = 0; ky < p.kernel[0]; ++ky)
                for (int kx = 0; kx < p.kernel[1]; ++kx) acc += plane[(y0 + ky) * w + x0 + kx];
            return acc * inv;
        },
        "avgpool");
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return checked(std::move(out), "relu");
}

Tensor relu6(const Tensor& x) {
    Tensor out = x;
    for (auto& v : out.values()) v = std::clamp(v, 0.0, 6.0);
    return checked(std::move(out), "relu6");
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DataError("add shape mismatch: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
    }
    Tensor out = a;
    auto ov = out.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
    return checked(std::move(out), "add");
}

Tensor concat(std::span<const Tensor> inputs, int axis) {
    if (inputs.empty()) throw DataError("concat needs at least one input");
    const int rank = inputs[0].rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw DataError("concat axis out of range");
    Shape out_shape = inputs[0].shape();
    out_shape[static_cast<std::size_t>(axis)] = 0;
    for (const auto& t : inputs) {
        if (t.rank() != rank) throw DataError("concat rank mismatch");
        for (int d = 0; d < rank; ++d) {
            if (d != axis && t.dim(d) != inputs[0].dim(d)) {
                throw DataError("concat shape mismatch: " + shape_to_string(t.shape()) + " vs " +
                                shape_to_string(inputs[0].shape()));
            }
        }
        out_shape[static_cast<std::size_t>(axis)] += t.dim(axis);
    }
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<std::size_t>(d)];
    Tensor out(out_shape);
    auto ov = out.values();
    std::int64_t pos = 0;
    for (std::int64_t o = 0; o < outer; ++o) {
        for (const auto& t : inputs) {
            const auto chunk = t.dim(axis) * inner;
            const auto tv = t.values();
            std::copy_n(tv.begin() + o * chunk, chunk, ov.begin() + pos);
            pos += chunk;
        }
    }
    return checked(std::move(out), "concat");
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean, const Tensor& var,
                  double eps) {
    if (x.rank() < 2) throw DataError("batchnorm expects a channel axis");
    const auto c = x.dim(1);
    for (const Tensor* t : {&gamma, &beta, &mean, &var}) {
        if (t->size() != c) throw DataError("batchnorm statistics must have one value per channel");
    }
    const auto batch = x.dim(0);
    const auto inner = x.size() / (batch * c);
    Tensor out = x;
    auto ov = out.values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
        const double denom = std::sqrt(var[ch] + eps);
        const double scale = gamma[ch] / denom;
        for (std::int64_t n = 0; n < batch; ++n) {
            for (std::int64_t i = 0; i < inner; ++i) {
                auto& v = ov[(n * c + ch) * inner + i];
                v = scale * (v - mean[ch]) + beta[ch];
            }
        }
    }
    return checked(std::move(out), "batchnorm");
}

ElementwiseKind parse_elementwise_kind(std::string_view name) {
    if (name == "relu") return ElementwiseKind::relu;
    if (name == "relu6") return ElementwiseKind::relu6;
    if (name == "add") return ElementwiseKind::add;
    if (name == "concat") return ElementwiseKind::concat;
    if (name == "maxpool") return ElementwiseKind::maxpool;
    if (name == "avgpool") return ElementwiseKind::avgpool;
    if (name == "batchnorm") return ElementwiseKind::batchnorm;
    throw DataError("unknown elementwise kind '" + std::string(name) + "'");
}

Tensor elementwise(ElementwiseKind kind, std::span<const Tensor> inputs, const ElementwiseAttrs& attrs) {
    auto arity = [&](std::size_t n) {
        if (inputs.size() != n) throw DataError("elementwise op expects " + std::to_string(n) + " inputs");
    };
    switch (kind) {
        case ElementwiseKind::relu: arity(1); return relu(inputs[0]);
        case ElementwiseKind::relu6: arity(1); return relu6(inputs[0]);
        case ElementwiseKind::add: arity(2); return add(inputs[0], inputs[1]);
        case ElementwiseKind::concat: return concat(inputs, attrs.axis);
        case ElementwiseKind::maxpool: arity(1); return max_pool2d(inputs[0], attrs.pool);
        case ElementwiseKind::avgpool: arity(1); return avg_pool2d(inputs[0], attrs.pool);
        case ElementwiseKind::batchnorm:
            arity(5);
            return batch_norm(inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], attrs.eps);
    }
    throw DataError("unknown elementwise kind");
}

}  // namespace fixquant::kernels
