#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cpvit/archive.hpp"
#include "cpvit/encoder.hpp"
#include "cpvit/error.hpp"
#include "cpvit/pruner.hpp"
#include "cpvit/report.hpp"
#include "png.hpp"

namespace cpvit::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct Options {
    std::string model;
    std::string input;
    std::vector<std::uint64_t> synthetic;  // L E seed
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t classes = 10;
    std::string mode = "cp_vit";
    std::optional<double> target_ratio;
    std::optional<double> base_ratio;
    std::size_t k = 32;
    std::size_t delta = 2;
    double eta = 1.0;
    double head_ratio_coeff = 0.5;
    std::uint64_t seed = 0;
    std::string out = ".";
    std::string format = "csv";
    std::size_t sample = 0;
    std::optional<std::size_t> samples;
    std::vector<double> ratios{0.0, 0.25, 0.5};
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t scale = 8;
    std::size_t segments = 3;
};

struct Workload {
    EncoderWeights weights;
    std::vector<Tensor> inputs;
};

std::string fmt_double(const char* pattern, double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), pattern, value);
    return buffer;
}

void add_source_options(CLI::App& cmd, Options& o) {
    cmd.add_option("--model", o.model, "encoder archive (.cpvt) or its .json sidecar");
    auto* input = cmd.add_option("--input", o.input, "input bundle (.cpvt)");
    auto* synthetic = cmd.add_option("--synthetic", o.synthetic, "random input: L E seed (random model unless --model)")
                          ->expected(3);
    input->excludes(synthetic);
    cmd.add_option("--layers", o.layers, "synthetic model depth")->capture_default_str();
    cmd.add_option("--heads", o.heads, "synthetic model heads")->capture_default_str();
    cmd.add_option("--classes", o.classes, "synthetic model classes")->capture_default_str();
    cmd.add_option("--seed", o.seed, "seed for sampling and random selection")->capture_default_str();
    cmd.add_option("--out", o.out, "output directory")->capture_default_str();
}

void add_schedule_options(CLI::App& cmd, Options& o) {
    auto* target = cmd.add_option("--target-ratio", o.target_ratio, "terminal pruning ratio (default 0.5)");
    auto* base = cmd.add_option("--base-ratio", o.base_ratio, "per-layer increment r (target = r * layers)");
    target->excludes(base);
    cmd.add_option("--k", o.k, "sampled ordinates per layer")->capture_default_str();
    cmd.add_option("--delta", o.delta, "short-range threshold")->capture_default_str();
    cmd.add_option("--eta", o.eta, "attention-range coefficient")->capture_default_str();
    cmd.add_option("--head-ratio-coeff", o.head_ratio_coeff, "head ratio = coeff * patch ratio")->capture_default_str();
}

void add_format_option(CLI::App& cmd, Options& o) {
    cmd.add_option("--format", o.format, "table format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
}

EncoderConfig synthetic_config(const Options& o) {
    EncoderConfig cfg;
    cfg.num_layers = o.layers;
    cfg.num_heads = o.heads;
    cfg.seq_len = o.synthetic[0];
    cfg.embed_dim = o.synthetic[1];
    if (o.heads == 0 || cfg.embed_dim % o.heads != 0) {
        throw ConfigError("--synthetic embed dim " + std::to_string(cfg.embed_dim) + " is not divisible by --heads " +
                          std::to_string(o.heads));
    }
    cfg.head_dim = cfg.embed_dim / o.heads;
    cfg.ffn_hidden = 4 * cfg.embed_dim;
    cfg.num_classes = o.classes;
    cfg.validate();
    return cfg;
}

// Resolves the model and the inputs; `count` limits synthetic batches.
Workload load_workload(const Options& o, std::size_t default_count) {
    if (o.input.empty() && o.synthetic.empty()) throw ConfigError("one of --input or --synthetic is required");
    if (!o.input.empty() && o.model.empty()) throw ConfigError("--input requires --model");

    Workload w;
    if (!o.model.empty()) {
        spdlog::info("loading model {}", o.model);
        w.weights = load_encoder(o.model);
    } else {
        w.weights = random_encoder(synthetic_config(o), o.synthetic[2]);
    }
    const auto& cfg = w.weights.config;

    if (!o.input.empty()) {
        spdlog::info("loading inputs {}", o.input);
        w.inputs = load_inputs(o.input).inputs;
        if (w.inputs.empty()) throw ConfigError(o.input + " holds no inputs");
        for (const auto& x : w.inputs) {
            if (x.shape() != Shape{cfg.seq_len, cfg.embed_dim}) {
                throw ConfigError("input shape " + shape_string(x.shape()) + " does not match the model's [" +
                                  std::to_string(cfg.seq_len) + ", " + std::to_string(cfg.embed_dim) + "]");
            }
        }
        if (o.samples) w.inputs.resize(std::min(w.inputs.size(), *o.samples));
    } else {
        if (o.synthetic[0] != cfg.seq_len || o.synthetic[1] != cfg.embed_dim) {
            throw ConfigError("--synthetic L E must match the model (" + std::to_string(cfg.seq_len) + " " +
                              std::to_string(cfg.embed_dim) + ")");
        }
        const std::size_t n = o.samples.value_or(default_count);
        for (std::size_t i = 0; i < n; ++i) w.inputs.push_back(random_input(cfg.seq_len, cfg.embed_dim, o.synthetic[2] + i));
    }
    if (w.inputs.empty()) throw ConfigError("--samples must be positive");
    return w;
}

const Tensor& pick_sample(const Workload& w, std::size_t sample) {
    if (sample >= w.inputs.size()) {
        throw ConfigError("--sample " + std::to_string(sample) + " out of range (" + std::to_string(w.inputs.size()) +
                          " inputs)");
    }
    return w.inputs[sample];
}

PruneOptions prune_options(const Options& o) {
    PruneOptions options;
    options.scheduler.k = o.k;
    options.scheduler.delta = o.delta;
    options.scheduler.eta = o.eta;
    options.scheduler.head_ratio_coeff = o.head_ratio_coeff;
    options.scheduler.seed = o.seed;
    return options;
}

double resolve_target(const Options& o, std::size_t num_layers) {
    if (o.base_ratio) return *o.base_ratio * static_cast<double>(num_layers);
    return o.target_ratio.value_or(0.5);
}

fs::path prepare_out(const Options& o) {
    fs::path dir(o.out);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream file(path, std::ios::binary);
    if (!file) throw ArchiveError(ArchiveErrorKind::io, "cannot write " + path.string());
    file << text;
    if (!file) throw ArchiveError(ArchiveErrorKind::io, "write failed for " + path.string());
    spdlog::debug("wrote {}", path.string());
}

int cmd_run(const Options& o, std::ostream& out) {
    const auto mode = parse_ablation_mode(o.mode);
    const Workload w = load_workload(o, 1);
    const Tensor& x = pick_sample(w, o.sample);
    const double target = resolve_target(o, w.weights.config.num_layers);

    const RunResult result = run_ablation(w.weights, x, mode, target, o.seed, prune_options(o));
    const fs::path dir = prepare_out(o);
    write_text(dir / "trace.json", trace_to_json(result.trace, w.weights.config, result.flops));
    write_text(dir / "flops.csv", flops_to_csv(result.flops));
    write_text(dir / "masks.csv", masks_to_csv(result.trace));
    if (o.format == "json") write_text(dir / "flops.json", flops_to_json(result.flops));

    out << "mode=" << to_string(mode) << " ratio=" << fmt_double("%g", target)
        << " flops_saving=" << format_percent(result.flops.saving_percent())
        << " layers=" << w.weights.config.num_layers << '\n';
    return exit_ok;
}

struct AblationRow {
    AblationMode mode;
    double ratio;
    AgreementMetrics metrics;
    double flops_saving;
};

int cmd_ablate(const Options& o, std::ostream& out, std::ostream& err) {
    const Workload w = load_workload(o, 8);
    const PruneOptions options = prune_options(o);
    std::vector<Tensor> dense;
    for (const auto& x : w.inputs) dense.push_back(forward(w.weights, x).logits);

    constexpr AblationMode modes[] = {AblationMode::pure_random, AblationMode::prediction_only, AblationMode::cp_vit};
    std::vector<AblationRow> rows;
    for (double ratio : o.ratios) {
        for (AblationMode mode : modes) {
            std::vector<Tensor> logits;
            double saving = 0.0;
            for (std::size_t i = 0; i < w.inputs.size(); ++i) {
                const auto result = run_ablation(w.weights, w.inputs[i], mode, ratio, o.seed + i, options);
                logits.push_back(result.logits);
                saving += result.flops.saving_percent();
            }
            rows.push_back({mode, ratio, compare_logits(dense, logits), saving / static_cast<double>(w.inputs.size())});
            spdlog::info("ablate mode={} ratio={} top1={}", to_string(mode), ratio, rows.back().metrics.top1_agreement);
        }
    }

    std::ostringstream csv;
    csv << "mode,ratio,top1_agreement,mean_l2_drift,flops_saving\n";
    ordered_json j;
    j["format"] = "cpvit-ablation";
    j["version"] = 1;
    j["samples"] = w.inputs.size();
    j["rows"] = ordered_json::array();
    for (const auto& row : rows) {
        csv << to_string(row.mode) << ',' << fmt_double("%g", row.ratio) << ','
            << fmt_double("%.6f", row.metrics.top1_agreement) << ',' << fmt_double("%.6g", row.metrics.mean_l2_drift)
            << ',' << format_percent(row.flops_saving) << '\n';
        ordered_json r;
        r["mode"] = to_string(row.mode);
        r["ratio"] = row.ratio;
        r["top1_agreement"] = row.metrics.top1_agreement;
        r["mean_l2_drift"] = row.metrics.mean_l2_drift;
        r["flops_saving"] = row.flops_saving;
        j["rows"].push_back(std::move(r));
    }
    const fs::path dir = prepare_out(o);
    if (o.format == "json") {
        write_text(dir / "ablation.json", j.dump(2) + "\n");
    } else {
        write_text(dir / "ablation.csv", csv.str());
    }
    out << csv.str();

    for (double ratio : o.ratios) {
        if (std::abs(ratio - 0.5) > 1e-12) continue;
        double top1[3] = {};
        for (const auto& row : rows) {
            if (row.ratio == ratio) top1[static_cast<int>(row.mode)] = row.metrics.top1_agreement;
        }
        const double random = top1[static_cast<int>(AblationMode::pure_random)];
        const double prediction = top1[static_cast<int>(AblationMode::prediction_only)];
        const double cp_vit = top1[static_cast<int>(AblationMode::cp_vit)];
        if (!(cp_vit >= prediction && prediction >= random)) {
            err << "warning: expected top-1 agreement cp_vit >= prediction_only >= pure_random at ratio 0.5, got "
                << cp_vit << ", " << prediction << ", " << random << '\n';
        }
    }
    return exit_ok;
}

Tensor segment_layout(const std::vector<std::vector<std::size_t>>& segments, std::size_t seq_len) {
    const std::size_t patches = seq_len - 1;
    auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(patches))));
    const bool square = side * side == patches;
    const std::size_t rows = square ? side : 1;
    const std::size_t cols = square ? side : patches;
    Tensor grid({rows, cols}, 0.0);
    for (std::size_t s = 0; s < segments.size(); ++s) {
        for (std::size_t p : segments[s]) {
            const std::size_t cell = p - 1;
            grid.at(cell / cols, cell % cols) = static_cast<double>(s + 1);
        }
    }
    return grid;
}

int cmd_segment(const Options& o, std::ostream& out) {
    const Workload w = load_workload(o, 8);
    std::vector<SegmentAblationResult> results;
    for (std::size_t s = 0; s <= o.segments; ++s) {
        results.push_back(run_segment_ablation(w.weights, w.inputs, s, o.segments));
    }

    std::ostringstream csv;
    csv << "segment,mean_pruned_patches,top1_agreement,mean_l2_drift\n";
    ordered_json j;
    j["format"] = "cpvit-segments";
    j["version"] = 1;
    j["num_segments"] = o.segments;
    j["samples"] = w.inputs.size();
    j["rows"] = ordered_json::array();
    for (const auto& r : results) {
        csv << r.segment_id << ',' << fmt_double("%g", r.mean_pruned_patches) << ','
            << fmt_double("%.6f", r.metrics.top1_agreement) << ',' << fmt_double("%.6g", r.metrics.mean_l2_drift)
            << '\n';
        ordered_json row;
        row["segment"] = r.segment_id;
        row["mean_pruned_patches"] = r.mean_pruned_patches;
        row["top1_agreement"] = r.metrics.top1_agreement;
        row["mean_l2_drift"] = r.metrics.mean_l2_drift;
        j["rows"].push_back(std::move(row));
    }

    const fs::path dir = prepare_out(o);
    if (o.format == "json") {
        write_text(dir / "segments.json", j.dump(2) + "\n");
    } else {
        write_text(dir / "segments.csv", csv.str());
    }
    const auto segments = first_layer_segments(w.weights, pick_sample(w, o.sample), o.segments);
    write_png(render_heatmap(segment_layout(segments, w.weights.config.seq_len), o.scale), dir / "segments.png");
    out << csv.str();
    return exit_ok;
}

int cmd_heatmap(const Options& o, std::ostream& out) {
    const Workload w = load_workload(o, 1);
    const auto& cfg = w.weights.config;
    if (o.layer >= cfg.num_layers) throw ConfigError("--layer " + std::to_string(o.layer) + " out of range");
    if (o.head >= cfg.num_heads) throw ConfigError("--head " + std::to_string(o.head) + " out of range");
    if (o.scale == 0) throw ConfigError("--scale must be positive");

    const auto attention = record_attention(w.weights, pick_sample(w, o.sample));
    const GrayImage image = render_heatmap(attention[o.layer].slice(o.head), o.scale);
    const fs::path dir = prepare_out(o);
    const fs::path path = dir / ("heatmap_l" + std::to_string(o.layer) + "_h" + std::to_string(o.head) + ".png");
    write_png(image, path);
    out << "heatmap layer=" << o.layer << " head=" << o.head << " size=" << image.width << 'x' << image.height
        << " path=" << path.string() << '\n';
    return exit_ok;
}

}  // namespace

void configure_logging() {
    auto logger = spdlog::get("cpvit");
    if (!logger) logger = spdlog::stderr_color_mt("cpvit");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* level = std::getenv("CPVIT_LOG")) {
        const std::string name(level);
        const auto parsed = spdlog::level::from_str(name);
        if (parsed == spdlog::level::off && name != "off") {
            spdlog::warn("unknown CPVIT_LOG level '{}', keeping warn", name);
        } else {
            spdlog::set_level(parsed);
        }
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Options o;
    CLI::App app{"Cascade pruning engine for vision-transformer encoders", "cpvit"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "prune one input and write trace.json, flops.csv and masks.csv");
    add_source_options(*run, o);
    add_schedule_options(*run, o);
    add_format_option(*run, o);
    run->add_option("--mode", o.mode, "cp_vit | prediction_only | pure_random")
        ->check(CLI::IsMember({"cp_vit", "prediction_only", "pure_random"}))
        ->capture_default_str();
    run->add_option("--sample", o.sample, "index into the input bundle")->capture_default_str();

    auto* ablate = app.add_subcommand("ablate", "compare pure_random, prediction_only and cp_vit against dense");
    add_source_options(*ablate, o);
    add_schedule_options(*ablate, o);
    add_format_option(*ablate, o);
    ablate->add_option("--ratios", o.ratios, "comma-separated terminal ratios")->delimiter(',')->capture_default_str();
    ablate->add_option("--samples", o.samples, "number of inputs (default: bundle size, or 8 synthetic)");

    auto* segment = app.add_subcommand("segment", "prune first-layer attention segments and measure logit drift");
    add_source_options(*segment, o);
    add_format_option(*segment, o);
    segment->add_option("--samples", o.samples, "number of inputs (default: bundle size, or 8 synthetic)");
    segment->add_option("--segments", o.segments, "number of segments")->capture_default_str();
    segment->add_option("--sample", o.sample, "input rendered into segments.png")->capture_default_str();
    segment->add_option("--scale", o.scale, "pixels per patch")->capture_default_str();

    auto* heatmap = app.add_subcommand("heatmap", "render one head's dense attention probabilities as a PNG");
    add_source_options(*heatmap, o);
    heatmap->add_option("--layer", o.layer)->capture_default_str();
    heatmap->add_option("--head", o.head)->capture_default_str();
    heatmap->add_option("--scale", o.scale, "pixels per attention entry")->capture_default_str();
    heatmap->add_option("--sample", o.sample, "index into the input bundle")->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return exit_ok;
        err << app.help();
        return exit_config;
    }

    try {
        if (run->parsed()) return cmd_run(o, out);
        if (ablate->parsed()) return cmd_ablate(o, out, err);
        if (segment->parsed()) return cmd_segment(o, out);
        if (heatmap->parsed()) return cmd_heatmap(o, out);
    } catch (const ModelError& e) {
        err << "error: " << e.what() << '\n';
        return exit_io;
    } catch (const ArchiveError& e) {
        err << "error: " << e.what() << '\n';
        return exit_io;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return exit_io;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_config;
    }
    return exit_config;
}

}  // namespace cpvit::cli
