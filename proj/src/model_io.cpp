// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/model_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fixquant/error.hpp"

namespace fixquant {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

json attrs_to_json(const Node& n) {
    json a = json::object();
    const auto& at = n.attrs;
    switch (n.kind) {
        case NodeKind::input:
            a["shape"] = at.shape;
            break;
        case NodeKind::conv2d:
            a["stride"] = at.stride;
            a["padding"] = at.padding;
            a["groups"] = at.groups;
            break;
        case NodeKind::maxpool:
        case NodeKind::avgpool:
            a["kernel"] = at.kernel;
            a["stride"] = at.stride;
            break;
        case NodeKind::concat:
            a["axis"] = at.axis;
            break;
        case NodeKind::batchnorm:
            a["eps"] = at.eps;
            break;
        default:
            break;
    }
    return a;
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(where + ": field '" + key + "' has the wrong type");
    }
}

NodeAttrs attrs_from_json(const json& a, NodeKind kind, const std::string& where) {
    NodeAttrs at;
    if (!a.is_object()) throw DataError(where + ": attrs must be an object");
    if (a.contains("shape")) at.shape = get_field<Shape>(a, "shape", where);
    if (a.contains("kernel")) at.kernel = get_field<std::array<int, 2>>(a, "kernel", where);
    if (a.contains("stride")) {
        at.stride = get_field<std::array<int, 2>>(a, "stride", where);
    } else if (kind == NodeKind::maxpool || kind == NodeKind::avgpool) {
        at.stride = at.kernel;
    }
    if (a.contains("padding")) at.padding = get_field<std::array<int, 2>>(a, "padding", where);
    if (a.contains("groups")) at.groups = get_field<int>(a, "groups", where);
    if (a.contains("axis")) at.axis = get_field<int>(a, "axis", where);
    if (a.contains("eps")) at.eps = get_field<double>(a, "eps", where);
    for (auto v : at.shape)
        if (v <= 0) throw DataError(where + ": shape extents must be positive");
    return at;
}

}  // namespace

std::vector<unsigned char> encode_float32(std::span<const double> values) {
    std::vector<unsigned char> out(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
    }
    return out;
}

std::vector<double> decode_float32(std::span<const unsigned char> bytes) {
    if (bytes.size() % 4 != 0) throw DataError("float32 payload length is not a multiple of 4");
    std::vector<double> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
        out[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    return out;
}

SerializedModel serialize_model(const GraphModel& graph, const std::string& weights_file) {
    graph.validate();
    SerializedModel out;
    json nodes = json::array();
    json tensors = json::array();
    for (const auto& n : graph.nodes()) {
        json params = json::object();
        for (const auto& [role, t] : n.params) {
            const auto name = GraphModel::param_name(n.name, role);
            params[role] = name;
            const auto bytes = encode_float32(t.values());
            tensors.push_back(
                {{"name", name}, {"shape", t.shape()}, {"offset", out.blob.size()}, {"nbytes", bytes.size()}});
            out.blob.insert(out.blob.end(), bytes.begin(), bytes.end());
        }
        nodes.push_back({{"name", n.name},
                         {"kind", to_string(n.kind)},
                         {"inputs", n.inputs},
                         {"attrs", attrs_to_json(n)},
                         {"params", params}});
    }
    out.manifest = {{"format", "fixquant-model"},
                    {"version", kVersion},
                    {"weights_file", weights_file},
                    {"nodes", nodes},
                    {"tensors", tensors}};
    return out;
}

GraphModel deserialize_model(const json& m, std::span<const unsigned char> blob) {
    if (!m.is_object() || m.value("format", "") != "fixquant-model") {
        throw DataError("manifest is not a fixquant-model document");
    }
    if (get_field<int>(m, "version", "manifest") != kVersion) throw DataError("unsupported model version");
    std::map<std::string, Tensor> tensors;
    for (const auto& t : get_field<json>(m, "tensors", "manifest")) {
        const auto name = get_field<std::string>(t, "name", "tensor entry");
        const auto where = "tensor '" + name + "'";
        const auto shape = get_field<Shape>(t, "shape", where);
        const auto offset = get_field<std::uint64_t>(t, "offset", where);
        const auto nbytes = get_field<std::uint64_t>(t, "nbytes", where);
        for (auto v : shape)
            if (v <= 0) throw DataError(where + ": shape extents must be positive");
        if (nbytes != static_cast<std::uint64_t>(numel(shape)) * 4) {
            throw DataError(where + ": nbytes does not match shape " + shape_to_string(shape));
        }
        if (offset > blob.size() || nbytes > blob.size() - offset) {
            throw DataError(where + ": extends past the end of the weights blob");
        }
        if (!tensors.emplace(name, Tensor(shape, decode_float32(blob.subspan(offset, nbytes)))).second) {
            throw DataError("duplicate tensor '" + name + "'");
        }
    }
    GraphModel g;
    for (const auto& jn : get_field<json>(m, "nodes", "manifest")) {
        Node n;
        n.name = get_field<std::string>(jn, "name", "node entry");
        const auto where = "node '" + n.name + "'";
        n.kind = parse_node_kind(get_field<std::string>(jn, "kind", where));
        n.inputs = jn.contains("inputs") ? get_field<std::vector<std::string>>(jn, "inputs", where)
                                         : std::vector<std::string>{};
        n.attrs = attrs_from_json(jn.value("attrs", json::object()), n.kind, where);
        const json params = jn.value("params", json::object());
        for (const auto& item : params.items()) {
            const std::string role = item.key();
            const json& ref = item.value();
            if (!ref.is_string()) throw DataError(where + ": parameter references must be tensor names");
            auto it = tensors.find(ref.get<std::string>());
            if (it == tensors.end()) throw DataError(where + ": unknown tensor '" + ref.get<std::string>() + "'");
            n.params[role] = it->second;
        }
        g.add_node(std::move(n));
    }
    g.validate();
    (void)infer_shapes(g);
    return g;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw DataError("cannot write " + path.string());
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

void write_bytes(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace

GraphModel load_model(const std::filesystem::path& manifest_path) {
    const auto m = read_json(manifest_path);
    const auto blob_name = get_field<std::string>(m, "weights_file", "manifest");
    const auto blob = read_bytes(manifest_path.parent_path() / blob_name);
    return deserialize_model(m, blob);
}

void save_model(const GraphModel& graph, const std::filesystem::path& manifest_path) {
    const auto blob_name = manifest_path.stem().string() + ".bin";
    const auto s = serialize_model(graph, blob_name);
    write_json(manifest_path, s.manifest);
    write_bytes(manifest_path.parent_path() / blob_name, s.blob);
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    const auto m = read_json(manifest_path);
    if (m.value("format", "") != "fixquant-dataset") throw DataError("manifest is not a fixquant-dataset document");
    Dataset d;
    const auto task = get_field<std::string>(m, "task", "dataset");
    if (task == "classification") {
        d.task = Task::classification;
        d.num_classes = get_field<std::int64_t>(m, "num_classes", "dataset");
        if (d.num_classes < 2) throw DataError("dataset: num_classes must be at least 2");
    } else if (task == "regression") {
        d.task = Task::regression;
    } else {
        throw DataError("dataset: unknown task '" + task + "'");
    }
    const auto n = get_field<std::int64_t>(m, "num_samples", "dataset");
    if (n <= 0) throw DataError("dataset: num_samples must be positive");
    const auto blob = read_bytes(manifest_path.parent_path() / get_field<std::string>(m, "data_file", "dataset"));
    auto section = [&](const char* key, Shape shape) {
        const auto& s = get_field<json>(m, key, "dataset");
        const auto offset = get_field<std::uint64_t>(s, "offset", key);
        const auto nbytes = get_field<std::uint64_t>(s, "nbytes", key);
        if (nbytes != static_cast<std::uint64_t>(numel(shape)) * 4 || offset > blob.size() ||
            nbytes > blob.size() - offset) {
            throw DataError(std::string("dataset: ") + key + " section does not match its declared shape");
        }
        return Tensor(std::move(shape), decode_float32(std::span(blob).subspan(offset, nbytes)));
    };
    Shape in_shape{n};
    for (auto v : get_field<Shape>(m, "input_shape", "dataset")) in_shape.push_back(v);
    Shape t_shape{n};
    if (d.task == Task::regression)
        for (auto v : get_field<Shape>(m, "target_shape", "dataset")) t_shape.push_back(v);
    d.inputs = section("inputs", in_shape);
    d.targets = section("targets", t_shape);
    if (d.task == Task::classification) {
        for (auto v : d.targets.values()) {
            if (v != std::floor(v) || v < 0 || v >= static_cast<double>(d.num_classes)) {
                throw DataError("dataset: class labels must be integers in [0, num_classes)");
            }
        }
    }
    require_finite(d.inputs, "dataset inputs");
    return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& manifest_path) {
    const auto blob_name = manifest_path.stem().string() + ".bin";
    auto blob = encode_float32(d.inputs.values());
    const auto targets = encode_float32(d.targets.values());
    const auto in_bytes = blob.size();
    blob.insert(blob.end(), targets.begin(), targets.end());
    const Shape in_shape(d.inputs.shape().begin() + 1, d.inputs.shape().end());
    json m = {{"format", "fixquant-dataset"},
              {"version", kVersion},
              {"task", d.task == Task::classification ? "classification" : "regression"},
              {"num_samples", d.size()},
              {"input_shape", in_shape},
              {"data_file", blob_name},
              {"inputs", {{"offset", 0}, {"nbytes", in_bytes}}},
              {"targets", {{"offset", in_bytes}, {"nbytes", targets.size()}}}};
    if (d.task == Task::classification) {
        m["num_classes"] = d.num_classes;
    } else {
        m["target_shape"] = Shape(d.targets.shape().begin() + 1, d.targets.shape().end());
    }
    write_json(manifest_path, m);
    write_bytes(manifest_path.parent_path() / blob_name, blob);
}

Tensor slice_rows(const Tensor& t, std::int64_t begin, std::int64_t count) {
    if (t.rank() < 1 || begin < 0 || count <= 0 || begin + count > t.dim(0)) {
        throw DataError("row slice out of range");
    }
    Shape s = t.shape();
    s[0] = count;
    const auto row = t.size() / t.dim(0);
    const auto v = t.values();
    return Tensor(s, std::vector<double>(v.begin() + begin * row, v.begin() + (begin + count) * row));
}

Tensor gather_rows(const Tensor& t, std::span<const std::int64_t> rows) {
    if (rows.empty()) throw DataError("cannot gather zero rows");
    Shape s = t.shape();
    s[0] = static_cast<std::int64_t>(rows.size());
    const auto row = t.size() / t.dim(0);
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(numel(s)));
    const auto v = t.values();
    for (auto r : rows) {
        if (r < 0 || r >= t.dim(0)) throw DataError("row index out of range");
        data.insert(data.end(), v.begin() + r * row, v.begin() + (r + 1) * row);
    }
    return Tensor(s, std::move(data));
}

std::vector<Tensor> make_batches(const Tensor& t, std::int64_t batch_size, std::int64_t limit) {
    if (batch_size <= 0) throw UsageError("batch size must be positive");
    std::int64_t n = t.dim(0);
    if (limit >= 0) n = std::min(n, limit);
    std::vector<Tensor> out;
    for (std::int64_t b = 0; b < n; b += batch_size) out.push_back(slice_rows(t, b, std::min(batch_size, n - b)));
    return out;
}

double score(const Tensor& outputs, const Tensor& targets, Task task) {
    if (outputs.rank() < 1 || targets.rank() < 1 || outputs.dim(0) != targets.dim(0)) {
        throw DataError("outputs and targets disagree on the number of samples");
    }
    const auto n = outputs.dim(0);
    if (task == Task::regression) {
        if (outputs.size() != targets.size()) throw DataError("regression outputs and targets differ in size");
        double se = 0.0;
        for (std::int64_t i = 0; i < outputs.size(); ++i) se += (outputs[i] - targets[i]) * (outputs[i] - targets[i]);
        return -se / static_cast<double>(outputs.size());
    }
    const auto k = outputs.size() / n;
    std::int64_t correct = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < k; ++c)
            if (outputs[i * k + c] > outputs[i * k + best]) best = c;
        if (static_cast<double>(best) == targets[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace fixquant
