// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"
#include "fixquant/ptq.hpp"
#include "fixquant/quantizer.hpp"
#include "fixquant/quantsim.hpp"
#include "fixquant/range_setting.hpp"
#include "fixquant/toy_models.hpp"

namespace py = pybind11;
using namespace fixquant;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

std::vector<Tensor> to_batches(const std::vector<Array>& batches) {
    std::vector<Tensor> out;
    for (const auto& b : batches) out.push_back(to_tensor(b));
    return out;
}

}  // namespace

PYBIND11_MODULE(_fixquant, m) {
    m.doc() = "Quantization simulation toolkit";

    auto error = py::register_exception<Error>(m, "Error");
    py::register_exception<UsageError>(m, "UsageError", error.ptr());
    py::register_exception<DataError>(m, "DataError", error.ptr());
    py::register_exception<NumericError>(m, "NumericError", error.ptr());

    py::enum_<RangeKind>(m, "RangeKind").value("min_max", RangeKind::min_max).value("sqnr", RangeKind::sqnr);

    py::class_<QuantEncoding>(m, "QuantEncoding")
        .def(py::init([](double scale, std::int64_t zero_point, int bitwidth, bool is_signed, bool symmetric) {
                 QuantEncoding e{scale, zero_point, bitwidth, is_signed, symmetric};
                 e.validate();
                 return e;
             }),
             py::arg("scale"), py::arg("zero_point") = 0, py::arg("bitwidth") = 8, py::arg("is_signed") = false,
             py::arg("symmetric") = false)
        .def_readonly("scale", &QuantEncoding::scale)
        .def_readonly("zero_point", &QuantEncoding::zero_point)
        .def_readonly("bitwidth", &QuantEncoding::bitwidth)
        .def_readonly("is_signed", &QuantEncoding::is_signed)
        .def_readonly("symmetric", &QuantEncoding::symmetric)
        .def_property_readonly("grid_min", &QuantEncoding::grid_min)
        .def_property_readonly("grid_max", &QuantEncoding::grid_max)
        .def("__eq__", [](const QuantEncoding& a, const QuantEncoding& b) { return a == b; })
        .def("__repr__", [](const QuantEncoding& e) {
            return "QuantEncoding(scale=" + std::to_string(e.scale) + ", zero_point=" + std::to_string(e.zero_point) +
                   ", bitwidth=" + std::to_string(e.bitwidth) + ")";
        });

    m.def("encoding_from_range", &encoding_from_range, py::arg("qmin"), py::arg("qmax"), py::arg("bitwidth"),
          py::arg("symmetric") = false);
    m.def("quantize_value", &quantize_value);
    m.def("qdq", [](const Array& x, const QuantEncoding& e) { return to_array(qdq(to_tensor(x), e)); });
    m.def(
        "range_encoding",
        [](const Array& x, int bitwidth, bool symmetric, RangeKind kind) {
            RangeAccumulator acc;
            acc.observe(to_tensor(x).reshaped({static_cast<std::int64_t>(x.size())}));
            const auto& s = acc.channels().front();
            return kind == RangeKind::sqnr ? compute_sqnr(s, bitwidth, symmetric)
                                           : compute_minmax(s, bitwidth, symmetric);
        },
        py::arg("x"), py::arg("bitwidth") = 8, py::arg("symmetric") = false, py::arg("kind") = RangeKind::min_max);

    py::class_<GraphModel>(m, "GraphModel")
        .def_property_readonly("node_names",
                               [](const GraphModel& g) {
                                   std::vector<std::string> names;
                                   for (const auto& n : g.nodes()) names.push_back(n.name);
                                   return names;
                               })
        .def("param", [](const GraphModel& g, const std::string& node,
                         const std::string& role) { return to_array(g.node(node).param(role)); })
        .def("forward", [](const GraphModel& g, const Array& x) { return to_array(forward(g, to_tensor(x))); })
        .def("save", [](const GraphModel& g, const std::filesystem::path& p) { save_model(g, p); })
        .def("__eq__", [](const GraphModel& a, const GraphModel& b) { return a == b; });

    m.def("load_model", &load_model);
    m.def("fold_batch_norms", [](const GraphModel& g) { return fold_batch_norms(g); });
    m.def("equalize_model", [](const GraphModel& g) { return equalize_model(g).first; });

    py::module_ toy = m.def_submodule("toy", "Small seeded models");
    toy.def("mlp", [](const std::vector<std::int64_t>& sizes, std::uint64_t seed) { return toy::mlp(sizes, seed); });
    toy.def("conv_bn_relu_conv", &toy::conv_bn_relu_conv);
    toy.def("depthwise_net", &toy::depthwise_net);

    py::class_<QuantSimModel>(m, "QuantSim")
        .def(py::init([](const GraphModel& g, int param_bw, int output_bw, RangeKind scheme) {
                 return create_quantsim(g, param_bw, output_bw, scheme);
             }),
             py::arg("model"), py::arg("param_bw") = 8, py::arg("output_bw") = 8,
             py::arg("scheme") = RangeKind::min_max)
        .def_property_readonly("quantizer_names", &QuantSimModel::quantizer_names)
        .def("set_bitwidth", &QuantSimModel::set_bitwidth)
        .def("set_enabled", &QuantSimModel::set_enabled)
        .def("encoding", [](const QuantSimModel& s, const std::string& name) { return s.quantizer(name).encodings; })
        .def("compute_encodings",
             [](QuantSimModel& s, const std::vector<Array>& feed) { s.compute_encodings(to_batches(feed)); })
        .def("forward", [](const QuantSimModel& s, const Array& x) { return to_array(s.forward(to_tensor(x))); })
        .def("encodings_json", [](const QuantSimModel& s) { return s.encodings_json().dump(); })
        .def(
            "import_encodings",
            [](QuantSimModel& s, const std::string& text, bool freeze) {
                s.import_encodings(nlohmann::json::parse(text), freeze);
            },
            py::arg("text"), py::arg("freeze") = false)
        .def("export", [](const QuantSimModel& s, const std::filesystem::path& prefix) { s.export_model(prefix); });
}
