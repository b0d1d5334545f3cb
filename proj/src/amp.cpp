// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fixquant/amp.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"

namespace fixquant {

using nlohmann::json;

void CandidatePair::validate() const {
    if (activation_bw < 2 || activation_bw > 32 || param_bw < 2 || param_bw > 32)
        throw UsageError("candidate bitwidths must be in [2, 32], got " + label());
}

std::string CandidatePair::label() const {
    return "A" + std::to_string(activation_bw) + "W" + std::to_string(param_bw);
}

namespace {

constexpr int kCacheVersion = 1;
const char* const kAccuracyFile = "accuracy_list.json";
const char* const kParetoFile = "pareto_list.json";

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t i) {
        while (parent_[i] != i) i = parent_[i] = parent_[parent_[i]];
        return i;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<std::size_t> parent_;
};

// Activation quantizer that the value flowing out of `node` carries, looking
// through nodes that have none of their own (pools).
std::optional<std::string> carried_quantizer(const QuantSimModel& sim, std::string node) {
    const auto& acts = sim.activation_quantizers();
    for (;;) {
        if (acts.count(node) != 0) return node;
        const Node& n = sim.graph().node(node);
        if (n.inputs.empty()) return std::nullopt;
        node = n.inputs.front();
    }
}

json candidate_json(const CandidatePair& c) { return json::array({c.activation_bw, c.param_bw}); }

CandidatePair candidate_from_json(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer())
        throw DataError("amp cache: malformed candidate");
    return {j[0].get<int>(), j[1].get<int>()};
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

void check_candidates(const std::vector<CandidatePair>& candidates) {
    if (candidates.empty()) throw UsageError("amp needs at least one candidate");
    for (const auto& c : candidates) c.validate();
}

std::size_t candidate_index(const std::vector<CandidatePair>& candidates, const CandidatePair& c) {
    const auto it = std::find(candidates.begin(), candidates.end(), c);
    if (it == candidates.end()) throw DataError("amp cache: candidate " + c.label() + " is not in the candidate list");
    return static_cast<std::size_t>(it - candidates.begin());
}

json load_cache(const std::filesystem::path& path, const std::string& fingerprint) {
    json j;
    try {
        j = read_json(path);
    } catch (const DataError&) {
        throw DataError("amp cache: cannot parse " + path.string());
    }
    if (!j.is_object() || j.value("version", 0) != kCacheVersion || !j.contains("entries") || !j["entries"].is_array())
        throw DataError("amp cache: " + path.string() + " is corrupt");
    if (j.value("fingerprint", "") != fingerprint)
        throw DataError("amp cache: " + path.string() +
                        " belongs to a different model or candidate list; rerun with a clean start");
    return j;
}

double number(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_number()) throw DataError(std::string("amp cache: missing number '") + key + "'");
    return j[key].get<double>();
}

int group_id(const json& j, std::size_t group_count) {
    if (!j.contains("group") || !j["group"].is_number_integer()) throw DataError("amp cache: missing group id");
    const int g = j["group"].get<int>();
    if (g < 0 || static_cast<std::size_t>(g) >= group_count) throw DataError("amp cache: group id out of range");
    return g;
}

void save_accuracy(const std::filesystem::path& path, const std::string& fingerprint,
                   const std::vector<CandidatePair>& candidates, const std::optional<double>& baseline,
                   std::vector<AccuracyEntry> entries) {
    std::sort(entries.begin(), entries.end(), [&](const AccuracyEntry& a, const AccuracyEntry& b) {
        return std::pair(a.group, candidate_index(candidates, a.candidate)) <
               std::pair(b.group, candidate_index(candidates, b.candidate));
    });
    json j{{"version", kCacheVersion}, {"fingerprint", fingerprint}, {"baseline", nullptr}, {"entries", json::array()}};
    if (baseline) j["baseline"] = *baseline;
    for (const auto& e : entries)
        j["entries"].push_back({{"group", e.group}, {"candidate", candidate_json(e.candidate)}, {"accuracy", e.accuracy}});
    write_json(path, j);
}

void save_pareto(const std::filesystem::path& path, const std::string& fingerprint, const std::optional<double>& baseline,
                 const std::vector<ParetoEntry>& entries) {
    json j{{"version", kCacheVersion}, {"fingerprint", fingerprint}, {"baseline", nullptr}, {"entries", json::array()}};
    if (baseline) j["baseline"] = *baseline;
    for (const auto& e : entries)
        j["entries"].push_back({{"group", e.group},
                                {"candidate", candidate_json(e.candidate)},
                                {"relative_bit_ops", e.relative_bit_ops},
                                {"accuracy", e.accuracy}});
    write_json(path, j);
}

void set_all(QuantSimModel& sim, const std::vector<QuantizerGroup>& groups, const std::vector<CandidatePair>& a) {
    for (const auto& g : groups) apply_candidate(sim, g, a[static_cast<std::size_t>(g.id)]);
}

}  // namespace

std::vector<QuantizerGroup> find_layer_groups(const QuantSimModel& sim) {
    const auto names = sim.quantizer_names();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = i;
    UnionFind uf(names.size());
    const auto& graph = sim.graph();
    const auto& acts = sim.activation_quantizers();
    std::map<std::string, bool> input_attached;

    for (auto idx : graph.topo_order()) {
        const Node& n = graph.nodes()[idx];
        const bool own = acts.count(n.name) != 0;
        if (is_mac_layer(n.kind)) {
            for (const auto& [role, t] : n.params) {
                const auto p = GraphModel::param_name(n.name, role);
                if (index.count(p) != 0 && own) uf.unite(index.at(p), index.at(n.name));
            }
        }
        std::vector<std::string> feeding;
        for (const auto& in : n.inputs)
            if (const auto q = carried_quantizer(sim, in)) feeding.push_back(*q);
        if (n.kind == NodeKind::add || n.kind == NodeKind::concat) {
            // Inputs of an add/concat must end up on one grid.
            for (std::size_t i = 1; i < feeding.size(); ++i) uf.unite(index.at(feeding[0]), index.at(feeding[i]));
            if (own && !feeding.empty()) uf.unite(index.at(n.name), index.at(feeding[0]));
        } else if (own && !is_mac_layer(n.kind) && n.kind != NodeKind::input && !feeding.empty()) {
            uf.unite(index.at(n.name), index.at(feeding[0]));
        }
        // The model input joins the first quantized node reading it.
        if (own && n.kind != NodeKind::input) {
            for (const auto& q : feeding) {
                if (graph.node(q).kind != NodeKind::input || input_attached[q]) continue;
                input_attached[q] = true;
                uf.unite(index.at(q), index.at(n.name));
            }
        }
    }

    // Number groups by the topological position of their first node.
    std::map<std::string, std::size_t> topo_pos;
    const auto order = graph.topo_order();
    for (std::size_t i = 0; i < order.size(); ++i) topo_pos[graph.nodes()[order[i]].name] = i;
    auto owner = [&](const std::string& q) { return sim.is_param_quantizer(q) ? q.substr(0, q.rfind('.')) : q; };
    std::map<std::size_t, std::size_t> first_pos;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto root = uf.find(i);
        const auto pos = topo_pos.at(owner(names[i]));
        auto it = first_pos.find(root);
        if (it == first_pos.end() || pos < it->second) first_pos[root] = pos;
    }
    std::vector<std::pair<std::size_t, std::size_t>> roots(first_pos.begin(), first_pos.end());
    std::sort(roots.begin(), roots.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    std::map<std::size_t, int> id_of;
    std::vector<QuantizerGroup> groups(roots.size());
    for (std::size_t g = 0; g < roots.size(); ++g) {
        id_of[roots[g].first] = static_cast<int>(g);
        groups[g].id = static_cast<int>(g);
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        auto& g = groups[static_cast<std::size_t>(id_of.at(uf.find(i)))];
        (sim.is_param_quantizer(names[i]) ? g.param_quantizers : g.activation_quantizers).push_back(names[i]);
    }
    for (auto& g : groups) {
        std::vector<std::string> nodes;
        for (const auto& q : g.param_quantizers) nodes.push_back(owner(q));
        for (const auto& q : g.activation_quantizers) nodes.push_back(q);
        std::sort(nodes.begin(), nodes.end(),
                  [&](const std::string& a, const std::string& b) { return topo_pos.at(a) < topo_pos.at(b); });
        nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
        g.nodes = nodes;
        for (const auto& n : nodes)
            if (is_mac_layer(graph.node(n).kind) &&
                std::any_of(g.param_quantizers.begin(), g.param_quantizers.end(),
                            [&](const std::string& q) { return owner(q) == n; }))
                g.mac_layers.push_back(n);
    }
    return groups;
}

std::size_t max_candidate(const std::vector<CandidatePair>& candidates) {
    check_candidates(candidates);
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].product() > candidates[best].product()) best = i;
    return best;
}

double bit_ops(const QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
               const std::vector<CandidatePair>& assignment) {
    if (assignment.size() != groups.size()) throw UsageError("bit_ops: assignment must cover every group");
    double total = 0.0;
    for (const auto& g : groups) {
        const auto& c = assignment[static_cast<std::size_t>(g.id)];
        for (const auto& layer : g.mac_layers)
            total += static_cast<double>(mac_count(sim.graph(), layer)) * static_cast<double>(c.product());
    }
    return total;
}

double relative_bit_ops(const QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
                        const std::vector<CandidatePair>& assignment, const CandidatePair& baseline) {
    const double base = bit_ops(sim, groups, std::vector<CandidatePair>(groups.size(), baseline));
    if (base == 0.0) throw UsageError("model has no linear/conv layers; bit-ops are undefined");
    return bit_ops(sim, groups, assignment) / base;
}

void apply_candidate(QuantSimModel& sim, const QuantizerGroup& group, const CandidatePair& candidate) {
    candidate.validate();
    for (const auto& q : group.param_quantizers) sim.set_bitwidth(q, candidate.param_bw);
    for (const auto& name : group.activation_quantizers) {
        auto& q = sim.quantizer(name);
        if (q.stats && !q.stats->empty()) {
            sim.set_bitwidth(name, candidate.activation_bw);
        } else if (!q.enabled) {
            q.bitwidth = candidate.activation_bw;
        } else {
            throw UsageError("quantizer '" + name + "' has no calibration statistics; run compute_encodings first");
        }
    }
}

std::string amp_fingerprint(const QuantSimModel& sim, const std::vector<CandidatePair>& candidates) {
    const auto s = serialize_model(sim.graph(), "weights.bin");
    std::uint64_t h = 14695981039346656037ULL;
    const auto manifest = s.manifest.dump();
    h = fnv1a(h, manifest.data(), manifest.size());
    h = fnv1a(h, s.blob.data(), s.blob.size());
    std::ostringstream setup;
    for (const auto& c : candidates) setup << c.label() << ';';
    setup << to_string(sim.options().param_scheme) << ';' << to_string(sim.options().activation_scheme) << ';';
    for (const auto& name : sim.quantizer_names()) {
        const auto& q = sim.quantizer(name);
        setup << name << ':' << q.enabled << q.symmetric << (q.channel_axis ? *q.channel_axis : -1) << ';';
    }
    const auto text = setup.str();
    h = fnv1a(h, text.data(), text.size());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

AccuracyList sensitivity_analysis(QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
                                  const std::vector<CandidatePair>& candidates, const EvalCallback& eval_phase1,
                                  const std::filesystem::path& cache_dir) {
    const auto top = candidates[max_candidate(candidates)];
    const auto fingerprint = amp_fingerprint(sim, candidates);
    const auto path = cache_dir / kAccuracyFile;

    std::optional<double> baseline;
    std::vector<AccuracyEntry> entries;
    if (std::filesystem::exists(path)) {
        const auto j = load_cache(path, fingerprint);
        if (!j.contains("baseline")) throw DataError("amp cache: " + path.string() + " is corrupt");
        if (!j["baseline"].is_null()) baseline = number(j, "baseline");
        for (const auto& e : j["entries"]) {
            AccuracyEntry a{group_id(e, groups.size()), candidate_from_json(e.at("candidate")), number(e, "accuracy")};
            (void)candidate_index(candidates, a.candidate);
            entries.push_back(a);
        }
    }
    auto cached = [&](int g, const CandidatePair& c) {
        return std::any_of(entries.begin(), entries.end(),
                           [&](const AccuracyEntry& e) { return e.group == g && e.candidate == c; });
    };
    if (!baseline) {
        baseline = eval_phase1(sim);
        save_accuracy(path, fingerprint, candidates, baseline, entries);
    }
    for (const auto& g : groups) {
        for (const auto& c : candidates) {
            if (c == top || cached(g.id, c)) continue;
            apply_candidate(sim, g, c);
            double acc = 0.0;
            try {
                acc = eval_phase1(sim);
            } catch (...) {
                apply_candidate(sim, g, top);
                throw;
            }
            apply_candidate(sim, g, top);
            entries.push_back({g.id, c, acc});
            save_accuracy(path, fingerprint, candidates, baseline, entries);
        }
    }
    std::sort(entries.begin(), entries.end(), [&](const AccuracyEntry& a, const AccuracyEntry& b) {
        return std::pair(a.group, candidate_index(candidates, a.candidate)) <
               std::pair(b.group, candidate_index(candidates, b.candidate));
    });
    return {*baseline, entries};
}

ParetoResult build_pareto(QuantSimModel& sim, const std::vector<QuantizerGroup>& groups,
                          const std::vector<CandidatePair>& candidates, const AccuracyList& accuracy,
                          const EvalCallback& eval_phase2, double allowed_accuracy_drop,
                          const std::filesystem::path& cache_dir) {
    if (!(allowed_accuracy_drop >= 0.0)) throw UsageError("allowed accuracy drop must be >= 0");
    const auto top = candidates[max_candidate(candidates)];
    const auto fingerprint = amp_fingerprint(sim, candidates);
    const auto path = cache_dir / kParetoFile;

    std::map<std::pair<int, std::size_t>, double> sens;
    for (const auto& e : accuracy.entries) sens[{e.group, candidate_index(candidates, e.candidate)}] = e.accuracy;

    ParetoResult r;
    r.assignment.assign(groups.size(), top);
    std::optional<double> baseline;
    if (std::filesystem::exists(path)) {
        const auto j = load_cache(path, fingerprint);
        if (!j.contains("baseline")) throw DataError("amp cache: " + path.string() + " is corrupt");
        if (!j["baseline"].is_null()) baseline = number(j, "baseline");
        for (const auto& e : j["entries"])
            r.evaluated.push_back({group_id(e, groups.size()), candidate_from_json(e.at("candidate")),
                                   number(e, "relative_bit_ops"), number(e, "accuracy")});
        if (!baseline && !r.evaluated.empty()) throw DataError("amp cache: " + path.string() + " has no baseline");
    }
    set_all(sim, groups, r.assignment);
    if (!baseline) {
        baseline = eval_phase2(sim);
        ++r.phase2_evaluations;
        save_pareto(path, fingerprint, baseline, r.evaluated);
    }
    r.baseline_accuracy = *baseline;
    const double floor = *baseline - allowed_accuracy_drop;

    auto accepted = r.assignment;
    auto finish = [&] {
        r.assignment = accepted;
        set_all(sim, groups, accepted);
        return r;
    };

    double current = 1.0;
    for (const auto& e : r.evaluated) {
        const auto ci = candidate_index(candidates, e.candidate);
        auto& slot = r.assignment[static_cast<std::size_t>(e.group)];
        if (candidates[ci].product() >= slot.product() || !(e.relative_bit_ops < current))
            throw DataError("amp cache: " + path.string() + " does not describe a valid descent");
        slot = candidates[ci];
        current = e.relative_bit_ops;
        if (e.accuracy < floor) return finish();
        accepted = r.assignment;
        r.accepted.push_back(e);
    }

    for (;;) {
        // Cheapest phase-1 accuracy loss per relative bit-op saved.
        struct Move {
            int group;
            std::size_t candidate;
            double ratio, rel;
        };
        std::optional<Move> best;
        for (const auto& g : groups) {
            const auto gi = static_cast<std::size_t>(g.id);
            for (std::size_t ci = 0; ci < candidates.size(); ++ci) {
                if (candidates[ci].product() >= r.assignment[gi].product()) continue;
                auto trial = r.assignment;
                trial[gi] = candidates[ci];
                const double rel = relative_bit_ops(sim, groups, trial, top);
                const double saved = current - rel;
                if (!(saved > 0.0)) continue;
                const auto it = sens.find({g.id, ci});
                if (it == sens.end())
                    throw UsageError("accuracy list lacks group " + std::to_string(g.id) + " at " +
                                     candidates[ci].label());
                const double ratio = (accuracy.baseline - it->second) / saved;
                if (!best || ratio < best->ratio) best = Move{g.id, ci, ratio, rel};
            }
        }
        if (!best) return finish();
        r.assignment[static_cast<std::size_t>(best->group)] = candidates[best->candidate];
        set_all(sim, groups, r.assignment);
        const double acc = eval_phase2(sim);
        ++r.phase2_evaluations;
        const ParetoEntry e{best->group, candidates[best->candidate], best->rel, acc};
        r.evaluated.push_back(e);
        save_pareto(path, fingerprint, baseline, r.evaluated);
        current = best->rel;
        if (acc < floor) return finish();
        accepted = r.assignment;
        r.accepted.push_back(e);
    }
}

AmpResult choose_mixed_precision(QuantSimModel& sim, const std::vector<CandidatePair>& candidates,
                                 const EvalCallback& eval_phase1, const EvalCallback& eval_phase2,
                                 double allowed_accuracy_drop, const std::filesystem::path& results_dir,
                                 bool clean_start) {
    check_candidates(candidates);
    if (!(allowed_accuracy_drop >= 0.0)) throw UsageError("allowed accuracy drop must be >= 0");
    const auto top = candidates[max_candidate(candidates)];
    const auto fingerprint = amp_fingerprint(sim, candidates);
    const auto acc_path = results_dir / kAccuracyFile, pareto_path = results_dir / kParetoFile;
    if (clean_start) {
        std::filesystem::create_directories(results_dir);
        save_accuracy(acc_path, fingerprint, candidates, std::nullopt, {});
        save_pareto(pareto_path, fingerprint, std::nullopt, {});
    } else {
        for (const auto& p : {acc_path, pareto_path})
            if (!std::filesystem::exists(p))
                throw DataError("amp cache: " + p.string() + " is missing; rerun with a clean start");
    }

    AmpResult out;
    out.groups = find_layer_groups(sim);
    set_all(sim, out.groups, std::vector<CandidatePair>(out.groups.size(), top));
    out.accuracy = sensitivity_analysis(sim, out.groups, candidates, eval_phase1, results_dir);

    std::ostringstream sens;
    sens << "group,candidate,metric\n";
    for (const auto& e : out.accuracy.entries) sens << e.group << ',' << e.candidate.label() << ',' << fmt(e.accuracy) << '\n';
    write_text(results_dir / "sensitivity.csv", sens.str());

    out.pareto = build_pareto(sim, out.groups, candidates, out.accuracy, eval_phase2, allowed_accuracy_drop, results_dir);

    std::ostringstream pareto;
    pareto << "index,group,candidate,relative_bit_ops,accuracy\n";
    for (std::size_t i = 0; i < out.pareto.evaluated.size(); ++i) {
        const auto& e = out.pareto.evaluated[i];
        pareto << i << ',' << e.group << ',' << e.candidate.label() << ',' << fmt(e.relative_bit_ops) << ','
               << fmt(e.accuracy) << '\n';
    }
    write_text(results_dir / "pareto.csv", pareto.str());
    return out;
}

}  // namespace fixquant
