#include "cpvit/report.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace cpvit {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json flops_json(const FlopsReport& flops) {
    ordered_json j;
    j["convention"] = "encoder blocks only; one multiply-add = 2 FLOPs; softmax, layer norm and GELU excluded";
    j["layers"] = ordered_json::array();
    for (std::size_t l = 0; l < flops.layers.size(); ++l) {
        const auto& layer = flops.layers[l];
        ordered_json row;
        row["layer"] = l;
        row["alive_patches"] = layer.alive_patches;
        row["alive_heads"] = layer.alive_heads;
        row["dense_mhsa"] = layer.dense.mhsa;
        row["dense_ffn"] = layer.dense.ffn;
        row["pruned_mhsa"] = layer.pruned.mhsa;
        row["pruned_ffn"] = layer.pruned.ffn;
        j["layers"].push_back(std::move(row));
    }
    const auto dense = flops.dense_total();
    const auto pruned = flops.pruned_total();
    j["dense_total"] = dense.total();
    j["pruned_total"] = pruned.total();
    j["dense_mhsa_total"] = dense.mhsa;
    j["dense_ffn_total"] = dense.ffn;
    j["pruned_mhsa_total"] = pruned.mhsa;
    j["pruned_ffn_total"] = pruned.ffn;
    j["saving_percent"] = flops.saving_percent();
    return j;
}

}  // namespace

std::string format_percent(double percent) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.2f", percent);
    return buffer;
}

std::string trace_to_json(const PruneTrace& trace, const EncoderConfig& config, const FlopsReport& flops) {
    ordered_json j;
    j["format"] = "cpvit-trace";
    j["version"] = 1;
    j["mode"] = to_string(trace.mode);
    j["target_ratio"] = trace.target_ratio;

    ordered_json cfg;
    cfg["num_layers"] = config.num_layers;
    cfg["num_heads"] = config.num_heads;
    cfg["seq_len"] = config.seq_len;
    cfg["head_dim"] = config.head_dim;
    cfg["embed_dim"] = config.embed_dim;
    cfg["ffn_hidden"] = config.ffn_hidden;
    cfg["num_classes"] = config.num_classes;
    j["config"] = std::move(cfg);

    const auto& s = trace.scheduler;
    ordered_json sched;
    sched["k"] = s.k;
    sched["delta"] = s.delta;
    sched["eta"] = s.eta;
    sched["base_ratio"] = s.base_ratio;
    sched["head_ratio_coeff"] = s.head_ratio_coeff;
    sched["max_ratio"] = s.max_ratio;
    sched["seed"] = s.seed;
    sched["sampling"] = s.sampling == OrdinateSampling::random ? "random" : "exhaustive";
    sched["head_counting"] = s.head_counting == HeadCounting::all_heads ? "all_heads" : "single_head";
    sched["exclude_cls"] = s.exclude_cls;
    j["scheduler"] = std::move(sched);

    j["layers"] = ordered_json::array();
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& rec = trace.layers[l];
        ordered_json layer;
        layer["layer"] = l;
        layer["patch_ratio"] = rec.patch_ratio;
        layer["head_ratio"] = rec.head_ratio;
        layer["pruned_patches"] = rec.pruned_patches;
        layer["pruned_heads"] = rec.pruned_heads;
        layer["patch_threshold"] = rec.patch_threshold;
        layer["head_threshold"] = rec.head_threshold;
        if (rec.range) {
            ordered_json range;
            range["short_range_count"] = rec.range->short_range_count;
            range["votes"] = rec.range->votes;
            range["attention_range"] = rec.range->attention_range;
            layer["attention_range"] = std::move(range);
        } else {
            layer["attention_range"] = nullptr;
        }
        layer["patch_mask"] = rec.mask.patch_mask;
        layer["head_mask"] = rec.mask.head_mask;
        layer["patch_scores"] = rec.scores.patch;
        layer["head_scores"] = rec.scores.head;
        j["layers"].push_back(std::move(layer));
    }
    j["flops"] = flops_json(flops);
    return j.dump(2) + "\n";
}

std::string masks_to_csv(const PruneTrace& trace) {
    std::ostringstream os;
    os.precision(17);
    os << "layer,kind,index,alive,score\n";
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        const auto& rec = trace.layers[l];
        for (std::size_t i = 0; i < rec.mask.patch_mask.size(); ++i) {
            os << l << ",patch," << i << ',' << int(rec.mask.patch_mask[i]) << ',' << rec.scores.patch[i] << '\n';
        }
        for (std::size_t h = 0; h < rec.mask.head_mask.size(); ++h) {
            os << l << ",head," << h << ',' << int(rec.mask.head_mask[h]) << ',' << rec.scores.head[h] << '\n';
        }
    }
    return os.str();
}

std::string flops_to_csv(const FlopsReport& flops) {
    std::ostringstream os;
    os << "layer,alive_patches,alive_heads,dense_mhsa,dense_ffn,pruned_mhsa,pruned_ffn\n";
    for (std::size_t l = 0; l < flops.layers.size(); ++l) {
        const auto& layer = flops.layers[l];
        os << l << ',' << layer.alive_patches << ',' << layer.alive_heads << ',' << layer.dense.mhsa << ','
           << layer.dense.ffn << ',' << layer.pruned.mhsa << ',' << layer.pruned.ffn << '\n';
    }
    const auto dense = flops.dense_total();
    const auto pruned = flops.pruned_total();
    os << "total,,," << dense.mhsa << ',' << dense.ffn << ',' << pruned.mhsa << ',' << pruned.ffn << '\n';
    return os.str();
}

std::string flops_to_json(const FlopsReport& flops) { return flops_json(flops).dump(2) + "\n"; }

}  // namespace cpvit
