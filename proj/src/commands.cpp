#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tca/archive.hpp"
#include "tca/cli.hpp"
#include "tca/errors.hpp"
#include "tca/flops.hpp"
#include "tca/pipeline.hpp"
#include "tca/report.hpp"
#include "tca/toy_model.hpp"

namespace tca::cli {

namespace {

using nlohmann::json;

struct RunFlags {
    std::string rate = "0.9";
    std::string ratio = "2.0";
    std::string k = "2";
    std::string lambda = "2.0";
    std::string beta = "0.05";
    std::string direction = "shallow";
    std::string reservoir = "3";
    std::string strategy = "diversity";
    std::string mode = "tca";
    std::string blocks;  // empty: depth-scaled default
    double tau = 0.01;
    std::int64_t seed = 0;
};

void add_run_flags(CLI::App* app, RunFlags& f) {
    app->add_option("--rate", f.rate, "keep rate R per condensation stage")->capture_default_str();
    app->add_option("--ratio", f.ratio, "merge:prune ratio of removed tokens")->capture_default_str();
    app->add_option("--k", f.k, "merge centers per stage")->capture_default_str();
    app->add_option("--lambda", f.lambda, "logits correction weight")->capture_default_str();
    app->add_option("--beta", f.beta, "layer temperature")->capture_default_str();
    app->add_option("--direction", f.direction, "layer emphasis: shallow|deep")->capture_default_str();
    app->add_option("--reservoir", f.reservoir, "per-class reservoir capacity")->capture_default_str();
    app->add_option("--strategy", f.strategy, "fifo|uncertainty|similarity|diversity")
        ->capture_default_str();
    app->add_option("--mode", f.mode, "tca|baseline-evit|vanilla")->capture_default_str();
    app->add_option("--blocks", f.blocks, "1-indexed condensation blocks (default 4,7,10)");
    app->add_option("--tau", f.tau, "softmax temperature")->capture_default_str();
    app->add_option("--seed", f.seed, "run seed, echoed in the report")->capture_default_str();
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError(std::string("invalid ") + what + " '" + s + "'");
    }
}

std::size_t parse_count(const std::string& s, const char* what) {
    const double v = parse_double(s, what);
    if (v < 0 || v != std::floor(v)) throw InputError(std::string("invalid ") + what + " '" + s + "'");
    return static_cast<std::size_t>(v);
}

std::vector<int> parse_blocks(const std::string& s) {
    std::vector<int> out;
    for (const auto& item : split_list(s)) out.push_back(static_cast<int>(parse_count(item, "block")));
    return out;
}

std::string single(const std::string& value, const char* flag) {
    const auto items = split_list(value);
    if (items.size() != 1) {
        throw InputError(std::string(flag) + " takes one value here; use `ablate` for sweeps");
    }
    return items.front();
}

RunConfig make_config(const RunFlags& f, const std::string& rate, const std::string& ratio,
                      const std::string& k, const std::string& lambda, const std::string& beta,
                      const std::string& direction, const std::string& reservoir,
                      const std::string& strategy, const std::string& mode, std::size_t layers) {
    RunConfig c;
    c.plan.keep_rate = parse_double(rate, "--rate");
    c.plan.merge_prune_ratio = parse_double(ratio, "--ratio");
    c.plan.centers = parse_count(k, "--k");
    c.correction.lambda = parse_double(lambda, "--lambda");
    c.correction.beta = parse_double(beta, "--beta");
    c.correction.direction = parse_emphasis(direction);
    c.reservoir_capacity = parse_count(reservoir, "--reservoir");
    c.strategy = parse_strategy(strategy);
    c.mode = parse_mode(mode);
    c.condense_blocks = f.blocks.empty() ? default_blocks(layers) : parse_blocks(f.blocks);
    c.tau = f.tau;
    c.seed = f.seed;
    c.validate();
    return c;
}

struct Inputs {
    std::shared_ptr<const EncoderWeights> weights;
    TextEmbeddings text;
    std::unique_ptr<Dataset> data;
};

Inputs load_inputs(const std::string& model, const std::string& text, const std::string& data) {
    std::map<std::string, std::shared_ptr<TensorArchive>> cache;
    auto open = [&](const std::string& path) {
        auto& slot = cache[path];
        if (!slot) slot = std::make_shared<TensorArchive>(TensorArchive::load(path));
        return slot;
    };
    Inputs in;
    in.weights = std::make_shared<const EncoderWeights>(
        EncoderWeights::from_archive(*open(model), {}));
    in.text = TextEmbeddings::from_archive(*open(text));
    in.data = std::make_unique<Dataset>(*open(data));
    return in;
}

int cmd_run(const std::string& model, const std::string& text, const std::string& data,
            const RunFlags& f, const std::string& out_prefix, bool timing,
            const std::string& load_reservoir, const std::string& save_reservoir,
            std::ostream& out) {
    Inputs in = load_inputs(model, text, data);
    const RunConfig config =
        make_config(f, single(f.rate, "--rate"), single(f.ratio, "--ratio"), single(f.k, "--k"),
                    single(f.lambda, "--lambda"), single(f.beta, "--beta"),
                    single(f.direction, "--direction"), single(f.reservoir, "--reservoir"),
                    single(f.strategy, "--strategy"), single(f.mode, "--mode"),
                    in.weights->config.layers);
    if (in.data->size() > 0 && in.data->image_side() != in.weights->config.image_side) {
        throw InputError("dataset image side does not match the model");
    }
    std::optional<Reservoir> warm;
    if (!load_reservoir.empty()) {
        warm = Reservoir::from_archive(TensorArchive::load(load_reservoir), in.text.classes(),
                                       config.reservoir_capacity, config.strategy,
                                       in.weights->config.layers, in.weights->config.width);
    }
    TcaPipeline pipeline(in.weights, in.text, config, std::move(warm));
    ReportWriter writer(out_prefix, timing);
    for (std::size_t i = 0; i < in.data->size(); ++i) {
        writer.write(pipeline.process_sample(in.data->pixels(i), in.data->label(i)));
    }
    const json summary = summary_to_json(pipeline.summary(), config, in.text.classnames);
    writer.finish(summary);
    if (!save_reservoir.empty()) {
        TensorArchive snapshot;
        pipeline.reservoir().to_archive(snapshot);
        snapshot.save(save_reservoir);
    }
    out << summary.dump() << '\n';
    return 0;
}

int cmd_flops(const std::string& model, EncoderConfig geometry, const RunFlags& f,
              std::ostream& out) {
    if (!model.empty()) {
        geometry = EncoderWeights::from_archive(TensorArchive::load(model), {}).config;
    }
    geometry.condense_blocks = f.blocks.empty() ? default_blocks(geometry.layers) : parse_blocks(f.blocks);
    geometry.validate();
    CondensationPlan plan;
    plan.keep_rate = parse_double(single(f.rate, "--rate"), "--rate");
    plan.merge_prune_ratio = parse_double(single(f.ratio, "--ratio"), "--ratio");
    plan.centers = parse_count(single(f.k, "--k"), "--k");
    const RunMode mode = parse_mode(single(f.mode, "--mode"));
    if (mode == RunMode::vanilla) plan.keep_rate = 1.0;
    if (mode == RunMode::baseline_evit) plan.merge_prune_ratio = 0.0;
    plan.validate();

    const FlopsBreakdown est = flops_estimate(geometry, plan, mode == RunMode::tca);
    const std::uint64_t vanilla = vanilla_flops(geometry).total();
    json tokens = json::array();
    for (const auto& b : planned_block_tokens(geometry, plan, mode == RunMode::tca)) {
        tokens.push_back({b.attention_tokens, b.mlp_tokens});
    }
    const json j = {{"mode", to_string(mode)},
                    {"rate", plan.keep_rate},
                    {"flops", est.total()},
                    {"gflops", static_cast<double>(est.total()) / 1e9},
                    {"vanilla_flops", vanilla},
                    {"flops_ratio", static_cast<double>(est.total()) / static_cast<double>(vanilla)},
                    {"breakdown",
                     {{"patch_embed", est.patch_embed},
                      {"attention", est.attention},
                      {"mlp", est.mlp},
                      {"anchor_scoring", est.anchor_scoring}}},
                    {"block_tokens", tokens}};
    out << j.dump() << '\n';
    return 0;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

int cmd_ablate(const std::string& model, const std::string& text, const std::string& data,
               const RunFlags& f, const std::string& csv_path, std::size_t jobs,
               std::ostream& out) {
    struct Axis {
        const char* name;
        std::vector<std::string> values;
    };
    std::vector<Axis> axes = {{"mode", split_list(f.mode)},       {"rate", split_list(f.rate)},
                              {"ratio", split_list(f.ratio)},     {"k", split_list(f.k)},
                              {"lambda", split_list(f.lambda)},   {"beta", split_list(f.beta)},
                              {"direction", split_list(f.direction)},
                              {"reservoir", split_list(f.reservoir)},
                              {"strategy", split_list(f.strategy)}};
    for (const auto& a : axes) {
        if (a.values.empty()) throw InputError(std::string("empty sweep list for --") + a.name);
    }
    Inputs in = load_inputs(model, text, data);

    std::vector<std::vector<std::string>> cells{{}};
    for (const auto& a : axes) {
        std::vector<std::vector<std::string>> next;
        for (const auto& prefix : cells) {
            for (const auto& v : a.values) {
                auto row = prefix;
                row.push_back(v);
                next.push_back(std::move(row));
            }
        }
        cells = std::move(next);
    }
    std::vector<RunConfig> configs;
    for (const auto& c : cells) {
        configs.push_back(make_config(f, c[1], c[2], c[3], c[4], c[5], c[6], c[7], c[8], c[0],
                                      in.weights->config.layers));
    }

    // Cells share nothing mutable; each owns its reservoir.
    std::vector<RunSummary> results(configs.size());
    jobs = std::max<std::size_t>(jobs, 1);
    for (std::size_t begin = 0; begin < configs.size(); begin += jobs) {
        std::vector<std::future<RunSummary>> batch;
        for (std::size_t i = begin; i < std::min(configs.size(), begin + jobs); ++i) {
            batch.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                       [&, i] { return run_stream(*in.data, in.weights, in.text, configs[i]); }));
        }
        for (std::size_t i = 0; i < batch.size(); ++i) results[begin + i] = batch[i].get();
    }

    std::ostringstream csv;
    csv << "mode,rate,ratio,k,lambda,beta,direction,reservoir,strategy,samples,errors,accuracy,"
           "flops_ratio\n";
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto& c = configs[i];
        const auto& s = results[i];
        csv << to_string(c.mode) << ',' << format_number(c.plan.keep_rate) << ','
            << format_number(c.plan.merge_prune_ratio) << ',' << c.plan.centers << ','
            << format_number(c.correction.lambda) << ',' << format_number(c.correction.beta) << ','
            << to_string(c.correction.direction) << ',' << c.reservoir_capacity << ','
            << to_string(c.strategy) << ',' << s.samples << ',' << s.errors << ','
            << (s.accuracy ? format_number(*s.accuracy) : std::string()) << ','
            << format_number(s.flops_ratio) << '\n';
    }
    if (csv_path.empty() || csv_path == "-") {
        out << csv.str();
    } else {
        std::ofstream file(csv_path, std::ios::trunc);
        if (!file) throw InputError("cannot write '" + csv_path + "'");
        file << csv.str();
        out << configs.size() << " cells written to " << csv_path << '\n';
    }
    return 0;
}

int cmd_inspect(const std::string& path, std::ostream& out, std::ostream& err) {
    const InspectResult r = TensorArchive::inspect_file(path);
    for (const auto& [name, info] : r.entries) {
        out << name << '\t' << dtype_name(info.dtype) << "\t[";
        for (std::size_t i = 0; i < info.shape.size(); ++i) out << (i ? "," : "") << info.shape[i];
        out << "]\toffset=" << info.offset << "\tlength=" << info.length << '\n';
    }
    for (const auto& v : r.violations) err << "violation: " << v << '\n';
    out << r.entries.size() << " entries, " << r.violations.size() << " violations\n";
    return r.ok() ? 0 : 1;
}

int cmd_toy(const std::string& path, std::uint64_t seed, std::size_t classes, std::size_t samples,
            std::ostream& out) {
    if (classes < 2) throw InputError("a toy stream needs at least two classes");
    ToyGeometry g;
    make_toy_archive(g, classes, samples, seed).save(path);
    out << "wrote " << path << " (" << g.layers << " blocks, " << g.config().num_patches()
        << " patches, " << classes << " classes, " << samples << " samples)\n";
    return 0;
}

}  // namespace

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        cur.erase(0, cur.find_first_not_of(" \t"));
        cur.erase(cur.find_last_not_of(" \t") + 1);
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

std::vector<int> default_blocks(std::size_t layers) {
    std::vector<int> out;
    for (int b : {4, 7, 10}) {
        const int scaled = static_cast<int>(std::lround(b * static_cast<double>(layers) / 12.0));
        const int clamped = std::clamp(scaled, 1, static_cast<int>(layers));
        if (out.empty() || clamped > out.back()) out.push_back(clamped);
    }
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Token condensation test-time adaptation engine", "tca"};
    app.require_subcommand(1);

    RunFlags run_flags;
    std::string model, text, data, out_prefix = "report", load_res, save_res;
    bool timing = false;
    auto* run = app.add_subcommand("run", "adapt over a dataset stream and write reports");
    run->add_option("--model", model, "archive with visual/* weights")->required();
    run->add_option("--text", text, "archive with text/embeddings")->required();
    run->add_option("--data", data, "dataset archive")->required();
    run->add_option("--out", out_prefix, "report path prefix")->capture_default_str();
    run->add_flag("--timing", timing, "include per-sample latency in the report");
    run->add_option("--load-reservoir", load_res, "warm-start reservoir snapshot");
    run->add_option("--save-reservoir", save_res, "write the final reservoir snapshot");
    add_run_flags(run, run_flags);

    RunFlags flops_flags;
    std::string flops_model;
    EncoderConfig geometry = EncoderConfig::vit_b16();
    auto* flops = app.add_subcommand("flops", "analytic FLOPs for a geometry and keep rate");
    flops->add_option("--model", flops_model, "take the geometry from a weights archive");
    flops->add_option("--image-side", geometry.image_side)->capture_default_str();
    flops->add_option("--patch", geometry.patch_side)->capture_default_str();
    flops->add_option("--layers", geometry.layers)->capture_default_str();
    flops->add_option("--heads", geometry.heads)->capture_default_str();
    flops->add_option("--width", geometry.width)->capture_default_str();
    flops->add_option("--mlp-ratio", geometry.mlp_ratio)->capture_default_str();
    flops->add_option("--embed-dim", geometry.embed_dim)->capture_default_str();
    add_run_flags(flops, flops_flags);

    RunFlags sweep_flags;
    std::string sweep_model, sweep_text, sweep_data, csv_path;
    std::size_t jobs = 1;
    auto* ablate = app.add_subcommand("ablate", "Cartesian sweep over comma-separated flag values");
    ablate->add_option("--model", sweep_model)->required();
    ablate->add_option("--text", sweep_text)->required();
    ablate->add_option("--data", sweep_data)->required();
    ablate->add_option("--csv", csv_path, "output CSV (default stdout)");
    ablate->add_option("--jobs", jobs, "cells run in parallel")->capture_default_str();
    add_run_flags(ablate, sweep_flags);

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "list and validate an archive");
    inspect->add_option("archive", inspect_path)->required();

    std::string toy_path = "toy.tca";
    std::uint64_t toy_seed = 0;
    std::size_t toy_classes = 3, toy_samples = 12;
    auto* toy = app.add_subcommand("toy", "write a seeded toy model + text + data archive");
    toy->add_option("--out", toy_path)->capture_default_str();
    toy->add_option("--seed", toy_seed)->capture_default_str();
    toy->add_option("--classes", toy_classes)->capture_default_str();
    toy->add_option("--samples", toy_samples)->capture_default_str();

    std::vector<std::string> argv_rev(args.rbegin(), args.rend());
    try {
        app.parse(argv_rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (run->parsed()) {
            return cmd_run(model, text, data, run_flags, out_prefix, timing, load_res, save_res, out);
        }
        if (flops->parsed()) return cmd_flops(flops_model, geometry, flops_flags, out);
        if (ablate->parsed()) {
            return cmd_ablate(sweep_model, sweep_text, sweep_data, sweep_flags, csv_path, jobs, out);
        }
        if (inspect->parsed()) return cmd_inspect(inspect_path, out, err);
        if (toy->parsed()) return cmd_toy(toy_path, toy_seed, toy_classes, toy_samples, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

}  // namespace tca::cli
