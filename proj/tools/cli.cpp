// Copyright 2026 The fixquant Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "fixquant/amp.hpp"
#include "fixquant/debug.hpp"
#include "fixquant/error.hpp"
#include "fixquant/model_io.hpp"
#include "fixquant/ptq.hpp"
#include "fixquant/qat.hpp"
#include "fixquant/quantsim.hpp"
#include "fixquant/toy_models.hpp"

namespace fixquant::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Settings {
    std::string model;
    std::string data;
    std::string config;
    std::string encodings;
    std::string out = "out";
    int param_bw = 8;
    int output_bw = 8;
    std::string scheme = "min_max";
    std::string param_scheme;
    std::int64_t calib_samples = 1000;
    std::int64_t batch_size = 256;
    std::optional<std::uint64_t> seed;

    // quantsim / eval
    bool quantize = false;
    // adaround
    AdaRoundParams adaround;
    // bias-correct
    std::string bc_mode = "empirical";
    // qat
    std::string eval_data;
    QatOptions qat;
    // amp
    std::string candidates = "16,16;16,8;8,16";
    double allowed_drop = 0.01;
    bool clean_start = false;
    std::int64_t phase1_samples = 128;
    // visualize
    std::string what = "ranges";
    // debug
    int target_bw = 8;
    std::optional<double> expected_fp32;
    // ptq
    bool no_cle = false, no_adaround = false, no_bias_correction = false;
    // toy
    std::string toy_kind = "mlp";
    std::int64_t toy_samples = 512;
};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return s.str();
}

SimConfig sim_config(const Settings& s) { return s.config.empty() ? SimConfig{} : load_sim_config(s.config); }

QuantSimOptions sim_options(const Settings& s) {
    QuantSimOptions o;
    o.default_param_bw = s.param_bw;
    o.default_output_bw = s.output_bw;
    o.activation_scheme = parse_range_kind(s.scheme);
    o.param_scheme = parse_range_kind(s.param_scheme.empty() ? s.scheme : s.param_scheme);
    o.max_calibration_samples = s.calib_samples;
    return o;
}

GraphModel model_of(const Settings& s) {
    if (s.model.empty()) throw UsageError("--model is required");
    return load_model(s.model);
}

Dataset data_of(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string(flag) + " is required");
    return load_dataset(path);
}

std::vector<Tensor> feed_of(const Settings& s, const Dataset& d) {
    return make_batches(d.inputs, s.batch_size, s.calib_samples);
}

fs::path out_dir(const Settings& s) {
    fs::create_directories(s.out);
    return s.out;
}

// Export prefix named after the input model file.
fs::path out_prefix(const Settings& s) { return out_dir(s) / fs::path(s.model).stem(); }

// Builds the sim and takes the encodings file as the whole truth: bit-widths
// follow its records and quantizers it omits are disabled.
QuantSimModel sim_from_encodings(const Settings& s, const GraphModel& model) {
    QuantSimModel sim(model, sim_options(s), sim_config(s));
    const json j = read_json(s.encodings);
    std::vector<std::string> listed;
    for (const char* key : {"param_encodings", "activation_encodings"}) {
        if (!j.contains(key)) continue;
        for (const auto& [name, records] : j.at(key).items()) {
            if (!sim.has_quantizer(name)) throw DataError("encodings: unknown tensor name '" + name + "'");
            if (records.is_array() && !records.empty() && records[0].contains("bitwidth") &&
                records[0]["bitwidth"].is_number_integer())
                sim.quantizer(name).bitwidth = records[0]["bitwidth"].get<int>();
            listed.push_back(name);
        }
    }
    for (const auto& name : sim.quantizer_names())
        if (std::find(listed.begin(), listed.end(), name) == listed.end()) sim.set_enabled(name, false);
    sim.import_encodings(j, true);
    return sim;
}

QuantSimModel calibrated_sim(const Settings& s, const GraphModel& model, const Dataset& data) {
    if (!s.encodings.empty()) return sim_from_encodings(s, model);
    QuantSimModel sim(model, sim_options(s), sim_config(s));
    sim.compute_encodings(feed_of(s, data));
    return sim;
}

std::vector<CandidatePair> parse_candidates(const std::string& text) {
    std::vector<CandidatePair> out;
    std::stringstream all(text);
    std::string item;
    while (std::getline(all, item, ';')) {
        CandidatePair c;
        char comma = 0;
        std::stringstream one(item);
        if (!(one >> c.activation_bw >> comma >> c.param_bw) || comma != ',' || !(one >> std::ws).eof())
            throw UsageError("bad candidate '" + item + "'; expected activation_bw,param_bw");
        c.validate();
        out.push_back(c);
    }
    if (out.empty()) throw UsageError("--candidates is empty");
    return out;
}

void print_scores(std::ostream& out, const char* label, const std::pair<double, double>& lm) {
    out << label << " metric=" << fmt(lm.second) << " loss=" << fmt(lm.first) << '\n';
}

// ---- subcommands

void cmd_quantsim(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    const auto sim = calibrated_sim(s, model, data);
    sim.export_model(out_prefix(s));
    print_scores(out, "quantsim", evaluate(sim, data, s.batch_size));
}

void cmd_fold_bn(const Settings& s, std::ostream& out) {
    FoldReport report;
    const auto folded = fold_batch_norms(model_of(s), &report);
    save_model(folded, out_dir(s) / fs::path(s.model).filename());
    json j{{"folded", json::array()}, {"unfolded", report.unfolded}};
    for (const auto& [bn, layer] : report.folded) j["folded"].push_back({{"batchnorm", bn}, {"layer", layer}});
    write_json(out_dir(s) / "fold_report.json", j);
    out << "fold-bn folded=" << report.folded.size() << " unfolded=" << report.unfolded.size() << '\n';
}

void cmd_equalize(const Settings& s, std::ostream& out) {
    const auto [model, report] = equalize_model(model_of(s));
    save_model(model, out_dir(s) / fs::path(s.model).filename());
    json j{{"folded", report.fold.folded.size()}, {"relu6_replaced", report.relu6_replaced}, {"pairs", json::array()},
           {"high_bias", json::array()}};
    for (const auto& p : report.pairs)
        j["pairs"].push_back({{"layer1", p.layer1}, {"layer2", p.layer2}, {"scales", p.scales}});
    for (const auto& h : report.high_bias)
        j["high_bias"].push_back({{"layer1", h.layer1},
                                  {"layer2", h.layer2},
                                  {"applied", h.applied},
                                  {"reason", h.reason},
                                  {"absorbed", h.absorbed}});
    write_json(out_dir(s) / "cle_report.json", j);
    out << "equalize pairs=" << report.pairs.size() << " folded=" << report.fold.folded.size() << '\n';
}

void cmd_calibrate(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    QuantSimModel sim(model, sim_options(s), sim_config(s));
    sim.compute_encodings(feed_of(s, data));
    write_json(out_dir(s) / "encodings.json", sim.encodings_json());
    out << "calibrate quantizers=" << sim.quantizer_names().size() << '\n';
}

void cmd_eval(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    std::pair<double, double> lm;
    bool quantized = false;
    if (!s.encodings.empty() || s.quantize) {
        lm = evaluate(calibrated_sim(s, model, data), data, s.batch_size);
        quantized = true;
    } else {
        lm = evaluate(model, data, s.batch_size);
    }
    write_json(out_dir(s) / "eval.json", {{"metric", lm.second}, {"loss", lm.first}, {"quantized", quantized}});
    print_scores(out, "eval", lm);
}

void cmd_adaround(const Settings& s, std::ostream& out) {
    const auto data = data_of(s.data, "--data");
    const auto feed = feed_of(s, data);
    auto [model, report] = adaround(model_of(s), feed, s.adaround, s.param_bw,
                                    parse_range_kind(s.param_scheme.empty() ? s.scheme : s.param_scheme),
                                    sim_config(s));
    const auto prefix = out_prefix(s);
    save_model(model, prefix.string() + ".json");
    write_json(prefix.string() + ".encodings.json", report.encodings);
    std::ostringstream csv;
    csv << "layer,loss_nearest,loss_adaround,flipped,fell_back_to_nearest\n";
    for (const auto& l : report.layers)
        csv << l.layer << ',' << fmt(l.loss_nearest) << ',' << fmt(l.loss_adaround) << ',' << l.flipped << ','
            << (l.fell_back_to_nearest ? 1 : 0) << '\n';
    write_text(out_dir(s) / "adaround_report.csv", csv.str());
    out << "adaround layers=" << report.layers.size() << '\n';
}

void cmd_bias_correct(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    const auto feed = feed_of(s, data);
    QuantSimModel sim(model, sim_options(s), sim_config(s));
    sim.compute_encodings(feed);
    BiasCorrectionOptions o;
    if (s.bc_mode == "analytic") o.mode = BiasCorrectionMode::analytic_then_empirical;
    else if (s.bc_mode != "empirical") throw UsageError("--mode must be empirical or analytic");
    const auto report = bias_correct(sim, feed, o);
    sim.compute_encodings(feed);
    sim.export_model(out_prefix(s));
    json j{{"analytic", report.analytic_layers}, {"empirical", report.empirical_layers},
           {"skipped", report.skipped_layers}, {"corrections", report.corrections}};
    write_json(out_dir(s) / "bias_correction.json", j);
    print_scores(out, "bias-correct", evaluate(sim, data, s.batch_size));
}

void cmd_qat(const Settings& s, std::ostream& out) {
    if (!s.seed) throw UsageError("qat needs --seed");
    const auto model = model_of(s);
    const auto train = data_of(s.data, "--data");
    std::optional<Dataset> eval;
    if (!s.eval_data.empty()) eval = load_dataset(s.eval_data);
    auto sim = calibrated_sim(s, model, train);
    QatOptions o = s.qat;
    o.seed = *s.seed;
    o.log_csv = out_dir(s) / "qat_log.csv";
    const auto report = qat_train(sim, train, o, eval ? &*eval : nullptr);
    sim.export_model(out_prefix(s));
    const auto& last = report.epochs.back();
    out << "qat epochs=" << report.epochs.size() << " loss=" << fmt(last.loss) << " metric=" << fmt(last.metric)
        << '\n';
}

void cmd_amp(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    QuantSimModel sim(model, sim_options(s), sim_config(s));
    sim.compute_encodings(feed_of(s, data));
    Dataset phase1 = data;
    const auto n1 = std::min(s.phase1_samples, data.size());
    if (n1 <= 0) throw UsageError("--phase1-samples must be positive");
    phase1.inputs = slice_rows(data.inputs, 0, n1);
    phase1.targets = slice_rows(data.targets, 0, n1);
    const auto bs = s.batch_size;
    const auto result = choose_mixed_precision(
        sim, parse_candidates(s.candidates), [&](const QuantSimModel& m) { return evaluate(m, phase1, bs).second; },
        [&](const QuantSimModel& m) { return evaluate(m, data, bs).second; }, s.allowed_drop, out_dir(s),
        s.clean_start);
    sim.export_model(out_prefix(s));
    const double rel = result.pareto.accepted.empty() ? 1.0 : result.pareto.accepted.back().relative_bit_ops;
    out << "amp groups=" << result.groups.size() << " evaluated=" << result.pareto.evaluated.size()
        << " accepted=" << result.pareto.accepted.size() << " relative_bit_ops=" << fmt(rel)
        << " baseline=" << fmt(result.pareto.baseline_accuracy) << '\n';
}

void cmd_export(const Settings& s, std::ostream& out) {
    if (s.encodings.empty()) throw UsageError("export needs --encodings");
    const auto sim = sim_from_encodings(s, model_of(s));
    sim.export_model(out_prefix(s));
    out << "export prefix=" << out_prefix(s).string() << '\n';
}

void cmd_visualize(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    std::ostringstream csv;
    if (s.what == "ranges") {
        // Per output channel weight ranges, one row per channel.
        csv << "layer,channel,min,max\n";
        for (const auto& n : model.nodes()) {
            if (!is_mac_layer(n.kind)) continue;
            const Tensor& w = n.param("weight");
            const auto per = w.size() / w.dim(0);
            for (std::int64_t c = 0; c < w.dim(0); ++c) {
                const auto* first = w.values().data() + c * per;
                const auto [lo, hi] = std::minmax_element(first, first + per);
                csv << n.name << ',' << c << ',' << fmt(*lo) << ',' << fmt(*hi) << '\n';
            }
        }
        write_text(out_dir(s) / "weight_ranges.csv", csv.str());
    } else if (s.what == "activations") {
        const auto data = data_of(s.data, "--data");
        QuantSimModel sim(model, sim_options(s), sim_config(s));
        sim.compute_encodings(feed_of(s, data));
        csv << "quantizer,observed_min,observed_max,grid_min,grid_max\n";
        for (const auto& [name, q] : sim.activation_quantizers()) {
            if (!q.stats || q.stats->empty()) continue;
            const auto& st = q.stats->channels().front();
            const auto& e = q.encodings.front();
            csv << name << ',' << fmt(st.min) << ',' << fmt(st.max) << ',' << fmt(e.grid_min()) << ','
                << fmt(e.grid_max()) << '\n';
        }
        write_text(out_dir(s) / "activation_ranges.csv", csv.str());
    } else {
        throw UsageError("visualize supports 'ranges' and 'activations'");
    }
    out << "visualize " << s.what << '\n';
}

void cmd_debug(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    DebugOptions o;
    o.target_bw = s.target_bw;
    o.scheme = parse_range_kind(s.scheme);
    o.config = sim_config(s);
    o.allowed_drop = s.allowed_drop;
    o.expected_fp32_score = s.expected_fp32;
    o.calibration_batch = s.batch_size;
    const auto r = debug_quantization(model, data, o);
    write_debug_report(r, out_dir(s));
    if (!r.fp32_ok) {
        out << "debug fp32_ok=0 problem=\"" << r.fp32_problem << "\"\n";
        return;
    }
    out << "debug fp32_ok=1 dominant=" << r.dominant << " proceed=" << (r.proceed ? 1 : 0)
        << " worst=" << (r.sweep.empty() ? "-" : r.sweep.front().quantizer) << '\n';
}

void cmd_ptq(const Settings& s, std::ostream& out) {
    const auto model = model_of(s);
    const auto data = data_of(s.data, "--data");
    PtqOptions o;
    o.param_bw = s.param_bw;
    o.output_bw = s.output_bw;
    o.activation_scheme = parse_range_kind(s.scheme);
    o.param_scheme = parse_range_kind(s.param_scheme.empty() ? "sqnr" : s.param_scheme);
    o.config = sim_config(s);
    o.use_cle = !s.no_cle;
    o.use_adaround = !s.no_adaround;
    o.use_bias_correction = !s.no_bias_correction;
    o.adaround = s.adaround;
    const auto result = run_ptq_pipeline(model, feed_of(s, data), o);
    result.sim.export_model(out_prefix(s));
    write_json(out_dir(s) / "ptq_report.json", {{"steps", result.steps}});
    print_scores(out, "ptq", evaluate(result.sim, data, s.batch_size));
}

void cmd_toy(const Settings& s, std::ostream& out) {
    const auto seed = s.seed.value_or(0);
    GraphModel model;
    Dataset data;
    if (s.toy_kind == "mlp") {
        model = toy::mlp({4, 32, 32, 3}, seed);
        data = toy::teacher_regression(model, {4}, s.toy_samples, seed + 1);
    } else if (s.toy_kind == "conv") {
        model = toy::conv_bn_relu_conv(seed);
        data = toy::teacher_regression(fold_batch_norms(model), {3, 8, 8}, s.toy_samples, seed + 1);
    } else if (s.toy_kind == "depthwise") {
        model = toy::depthwise_net(seed);
        data = toy::teacher_regression(fold_batch_norms(model), {3, 8, 8}, s.toy_samples, seed + 1);
    } else if (s.toy_kind == "spiral") {
        model = toy::mlp({2, 24, 24, 2}, seed);
        data = toy::spiral(s.toy_samples, seed + 1);
        QatOptions o;
        o.epochs = 60;
        o.learning_rate = 0.2;
        o.lr_step_epochs = 40;
        o.batch_size = 16;
        o.seed = seed;
        fp32_train(model, data, o);
    } else {
        throw UsageError("toy kind must be mlp, conv, depthwise or spiral");
    }
    save_model(model, out_dir(s) / (s.toy_kind + ".json"));
    save_dataset(data, out_dir(s) / (s.toy_kind + "_data.json"));
    out << "toy " << s.toy_kind << " samples=" << data.size() << '\n';
}

// ---- option wiring

void add_model(CLI::App* c, Settings& s) {
    c->add_option("--model", s.model, "Model manifest (.json)")->required();
    c->add_option("--out", s.out, "Output directory")->capture_default_str();
}

void add_data(CLI::App* c, Settings& s, bool required = true) {
    auto* o = c->add_option("--data", s.data, "Dataset manifest (.json)");
    if (required) o->required();
    c->add_option("--calib-samples", s.calib_samples, "Samples used for calibration")->capture_default_str();
    c->add_option("--batch-size", s.batch_size, "Batch size for calibration and evaluation")->capture_default_str();
}

void add_sim(CLI::App* c, Settings& s) {
    c->add_option("--config", s.config, "Quantsim config JSON");
    c->add_option("--param-bw", s.param_bw, "Parameter bit-width")->capture_default_str();
    c->add_option("--output-bw", s.output_bw, "Activation bit-width")->capture_default_str();
    c->add_option("--scheme", s.scheme, "Range setting: min_max or sqnr")->capture_default_str();
    c->add_option("--param-scheme", s.param_scheme, "Weight range setting (defaults to --scheme)");
}

void add_adaround(CLI::App* c, Settings& s) {
    c->add_option("--num-batches", s.adaround.num_batches, "AdaRound batches")->capture_default_str();
    c->add_option("--iterations", s.adaround.num_iterations, "AdaRound iterations per layer")->capture_default_str();
    c->add_option("--reg-param", s.adaround.reg_param, "AdaRound rounding regularizer")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"fixquant: simulated fixed-point quantization of small networks"};
    app.require_subcommand(1);
    Settings s;
    std::function<void()> action;
    auto sub = [&](const char* name, const char* help, void (*fn)(const Settings&, std::ostream&)) {
        auto* c = app.add_subcommand(name, help);
        c->callback([&, fn] { action = [&, fn] { fn(s, out); }; });
        return c;
    };

    auto* c = sub("quantsim", "Calibrate a quantsim and export model + encodings", cmd_quantsim);
    add_model(c, s), add_data(c, s), add_sim(c, s);
    c->add_option("--encodings", s.encodings, "Use these encodings instead of calibrating");

    c = sub("fold-bn", "Fold batch norms into the preceding layers", cmd_fold_bn);
    add_model(c, s);

    c = sub("equalize", "Cross-layer equalization with BN folding and high-bias absorption", cmd_equalize);
    add_model(c, s);

    c = sub("calibrate", "Compute encodings and write encodings.json", cmd_calibrate);
    add_model(c, s), add_data(c, s), add_sim(c, s);

    c = sub("eval", "Evaluate the float model or a quantsim", cmd_eval);
    add_model(c, s), add_data(c, s), add_sim(c, s);
    c->add_option("--encodings", s.encodings, "Simulate with these encodings");
    c->add_flag("--quantize", s.quantize, "Calibrate on --data and evaluate the quantsim");

    c = sub("adaround", "Adaptive rounding of the weights", cmd_adaround);
    add_model(c, s), add_data(c, s), add_sim(c, s), add_adaround(c, s);

    c = sub("bias-correct", "Correct biases for the quantization error of the weights", cmd_bias_correct);
    add_model(c, s), add_data(c, s), add_sim(c, s);
    c->add_option("--mode", s.bc_mode, "empirical or analytic")->capture_default_str();

    c = sub("qat", "Quantization-aware training", cmd_qat);
    add_model(c, s), add_data(c, s), add_sim(c, s);
    c->add_option("--encodings", s.encodings, "Start from these encodings");
    c->add_option("--eval-data", s.eval_data, "Held-out dataset for the per-epoch metric");
    c->add_option("--epochs", s.qat.epochs)->capture_default_str();
    c->add_option("--lr", s.qat.learning_rate)->capture_default_str();
    c->add_option("--lr-step", s.qat.lr_step_epochs, "Epochs between decays")->capture_default_str();
    c->add_option("--lr-decay", s.qat.lr_decay)->capture_default_str();
    c->add_option("--train-batch", s.qat.batch_size, "Training batch size")->capture_default_str();
    c->add_option("--seed", s.seed, "Shuffle seed")->required();

    c = sub("amp", "Automatic mixed precision search", cmd_amp);
    add_model(c, s), add_data(c, s), add_sim(c, s);
    c->add_option("--candidates", s.candidates, "act,param pairs separated by ';'")->capture_default_str();
    c->add_option("--allowed-drop", s.allowed_drop, "Allowed metric drop")->capture_default_str();
    c->add_flag("--clean-start", s.clean_start, "Discard cached results");
    c->add_option("--phase1-samples", s.phase1_samples, "Leading samples used in phase 1")->capture_default_str();

    c = sub("export", "Write model + encodings from an encodings file", cmd_export);
    add_model(c, s), add_sim(c, s);
    c->add_option("--encodings", s.encodings, "Encodings JSON")->required();

    c = sub("visualize", "Write plot data (CSV)", cmd_visualize);
    c->add_option("what", s.what, "ranges or activations")->capture_default_str();
    add_model(c, s), add_data(c, s, false), add_sim(c, s);

    c = sub("debug", "Run the PTQ debugging flow", cmd_debug);
    add_model(c, s), add_data(c, s);
    c->add_option("--config", s.config, "Quantsim config JSON");
    c->add_option("--scheme", s.scheme, "Range setting: min_max or sqnr")->capture_default_str();
    c->add_option("--target-bw", s.target_bw, "Bit-width under test")->capture_default_str();
    c->add_option("--allowed-drop", s.allowed_drop, "Metric drop counted as harmless")->capture_default_str();
    c->add_option("--expected-fp32", s.expected_fp32, "Score of the model in its original pipeline");

    c = sub("ptq", "Full post-training quantization pipeline", cmd_ptq);
    add_model(c, s), add_data(c, s), add_sim(c, s), add_adaround(c, s);
    c->add_flag("--no-cle", s.no_cle);
    c->add_flag("--no-adaround", s.no_adaround);
    c->add_flag("--no-bias-correction", s.no_bias_correction);

    c = sub("toy", "Write a toy model and dataset", cmd_toy);
    c->add_option("kind", s.toy_kind, "mlp, conv, depthwise or spiral")->capture_default_str();
    c->add_option("--out", s.out, "Output directory")->capture_default_str();
    c->add_option("--samples", s.toy_samples)->capture_default_str();
    c->add_option("--seed", s.seed);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: category=usage message=" << e.what() << '\n';
        return 2;
    }

    auto fail = [&](std::string_view category, const std::string& message, int code) {
        std::string line = message;
        std::replace(line.begin(), line.end(), '\n', ' ');
        err << "error: category=" << category << " message=" << line << '\n';
        return code;
    };
    try {
        action();
    } catch (const Error& e) {
        const int code = e.category() == ErrorCategory::usage ? 2 : e.category() == ErrorCategory::data ? 3 : 4;
        return fail(to_string(e.category()), e.what(), code);
    } catch (const std::exception& e) {
        // Filesystem and JSON failures are input problems.
        return fail("data", e.what(), 3);
    }
    return 0;
}

}  // namespace fixquant::cli
