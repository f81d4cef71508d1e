#include "cpvit/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "cpvit/error.hpp"

namespace cpvit {

namespace {

enum class Schedule { layer_aware, uniform };
enum class Selection { score, random };

void require_ratio(double ratio, const char* what) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
        throw ParameterError(std::string(what) + " ratio " + std::to_string(ratio) + " outside [0, 1)");
    }
}

/// Number of additional entities to prune so the mask reaches its target.
std::size_t victims_needed(double ratio, std::size_t total, std::size_t alive, std::size_t reserved,
                           RatioSemantics semantics) {
    const std::size_t already = total - alive;
    const std::size_t cap = total - reserved;
    std::size_t target = semantics == RatioSemantics::cumulative ? prune_count(ratio, total)
                                                                 : already + prune_count(ratio, total);
    target = std::min(target, cap);
    return target > already ? target - already : 0;
}

/// Prunes the `count` lowest-scoring alive entries of `mask` from index `first` on.
void prune_lowest(BinaryMask& mask, const std::vector<double>& scores, std::size_t first, std::size_t count) {
    if (count == 0) return;
    std::vector<std::size_t> order;
    for (std::size_t i = first; i < mask.size(); ++i) {
        if (mask[i]) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    for (std::size_t n = 0; n < count && n < order.size(); ++n) mask[order[n]] = 0;
}

void prune_uniform(BinaryMask& mask, std::size_t first, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> pool;
    for (std::size_t i = first; i < mask.size(); ++i) {
        if (mask[i]) pool.push_back(i);
    }
    // partial Fisher-Yates
    for (std::size_t n = 0; n < count && n < pool.size(); ++n) {
        const std::size_t pick = n + uniform_index(rng, pool.size() - n);
        std::swap(pool[n], pool[pick]);
        mask[pool[n]] = 0;
    }
}

double min_alive_score(const std::vector<double>& scores, const BinaryMask& mask, std::size_t first) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = first; i < mask.size(); ++i) {
        if (mask[i]) best = std::min(best, scores[i]);
    }
    return std::isfinite(best) ? best : 0.0;
}

RunResult run_pruned(const EncoderWeights& weights, const Tensor& input, Schedule schedule, Selection selection,
                     AblationMode mode, double target_ratio, const PruneOptions& options) {
    const auto& config = weights.config;
    config.validate();
    options.scheduler.validate();
    if (input.shape() != Shape{config.seq_len, config.embed_dim}) {
        throw DimensionError("input shape " + shape_string(input.shape()) + ", model expects " +
                             shape_string({config.seq_len, config.embed_dim}));
    }
    const auto& params = options.scheduler;

    RunResult result;
    result.trace.mode = mode;
    result.trace.target_ratio = target_ratio;
    result.trace.scheduler = params;
    result.forward.layers.resize(config.num_layers);

    std::mt19937_64 sampling_rng(params.seed);
    // victims for random selection come from their own stream
    std::mt19937_64 selection_rng(params.seed ^ 0x9e3779b97f4a7c15ULL);

    CascadeMask mask = CascadeMask::dense(config.seq_len, config.num_heads);
    CumulativeScores scores = CumulativeScores::zeros(config.seq_len, config.num_heads);
    RatioState ratios;
    Tensor x = input;

    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const auto& layer = weights.layers[l];
        mask.layer_index = l;
        AttentionStage stage = begin_layer(layer, config, x, mask);

        LayerPruneRecord record;
        if (schedule == Schedule::layer_aware) {
            const RangeEstimate range =
                estimate_attention_range(stage.probability, params, sampling_rng, mask.patch_mask, mask.head_mask);
            ratios = next_ratio(ratios, range, params);
            record.range = range;
        } else {
            ratios = next_ratio(ratios, 1.0, params);
        }
        record.patch_ratio = ratios.r_prev;
        record.head_ratio = head_ratio(record.patch_ratio, config.num_heads, params.head_ratio_coeff);

        if (options.head_scores == HeadScoreRule::literal) {
            scores = accumulate_literal(scores, stage.probability, mask.patch_mask, mask.head_mask);
        } else {
            scores = accumulate(scores, fast_scores(stage.probability, mask.patch_mask, mask.head_mask));
        }

        CascadeMask next = selection == Selection::score
                               ? prune_layer(scores, mask, record.patch_ratio, record.head_ratio,
                                             options.ratio_semantics)
                               : prune_random(mask, record.patch_ratio, record.head_ratio, selection_rng,
                                              options.ratio_semantics);
        next.layer_index = l;
        validate_cascade(next, config.seq_len, config.num_heads, &mask);

        record.mask = next;
        record.scores = scores;
        record.patch_threshold = patch_threshold(scores, next);
        record.head_threshold = head_threshold(scores, next);
        record.pruned_patches = config.seq_len - next.alive_patches();
        record.pruned_heads = config.num_heads - next.alive_heads();
        result.trace.layers.push_back(std::move(record));

        x = finish_layer(layer, config, x, std::move(stage), next, options.forward, &result.forward.layers[l]);
        mask = std::move(next);
    }

    result.logits = readout(weights, x);
    result.output = std::move(x);
    result.flops = flops_report(result.trace, config);
    return result;
}

}  // namespace

AblationMode parse_ablation_mode(std::string_view name) {
    if (name == "pure_random") return AblationMode::pure_random;
    if (name == "prediction_only") return AblationMode::prediction_only;
    if (name == "cp_vit") return AblationMode::cp_vit;
    throw ParameterError("unknown ablation mode '" + std::string(name) +
                         "' (expected pure_random, prediction_only or cp_vit)");
}

const char* to_string(AblationMode mode) noexcept {
    switch (mode) {
        case AblationMode::pure_random: return "pure_random";
        case AblationMode::prediction_only: return "prediction_only";
        case AblationMode::cp_vit: return "cp_vit";
    }
    return "unknown";
}

std::vector<CascadeMask> PruneTrace::masks() const {
    std::vector<CascadeMask> out;
    out.reserve(layers.size());
    for (const auto& layer : layers) out.push_back(layer.mask);
    return out;
}

std::size_t prune_count(double ratio, std::size_t n) {
    // 0.29 * 100 evaluates to 28.999999999999996
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

CascadeMask prune_layer(const CumulativeScores& scores, const CascadeMask& prev_mask, double patch_ratio,
                        double head_ratio, RatioSemantics semantics) {
    require_ratio(patch_ratio, "patch");
    require_ratio(head_ratio, "head");
    const std::size_t len = prev_mask.patch_mask.size(), heads = prev_mask.head_mask.size();
    if (scores.patch.size() != len || scores.head.size() != heads) {
        throw DimensionError("prune_layer: score lengths do not match the mask");
    }
    CascadeMask next = prev_mask;
    prune_lowest(next.patch_mask, scores.patch, 1,
                 victims_needed(patch_ratio, len, prev_mask.alive_patches(), 2, semantics));
    prune_lowest(next.head_mask, scores.head, 0,
                 victims_needed(head_ratio, heads, prev_mask.alive_heads(), 1, semantics));
    return next;
}

CascadeMask prune_random(const CascadeMask& prev_mask, double patch_ratio, double head_ratio, std::mt19937_64& rng,
                         RatioSemantics semantics) {
    require_ratio(patch_ratio, "patch");
    require_ratio(head_ratio, "head");
    const std::size_t len = prev_mask.patch_mask.size(), heads = prev_mask.head_mask.size();
    CascadeMask next = prev_mask;
    prune_uniform(next.patch_mask, 1, victims_needed(patch_ratio, len, prev_mask.alive_patches(), 2, semantics), rng);
    prune_uniform(next.head_mask, 0, victims_needed(head_ratio, heads, prev_mask.alive_heads(), 1, semantics), rng);
    return next;
}

double patch_threshold(const CumulativeScores& scores, const CascadeMask& mask) {
    return min_alive_score(scores.patch, mask.patch_mask, 1);
}

double head_threshold(const CumulativeScores& scores, const CascadeMask& mask) {
    return min_alive_score(scores.head, mask.head_mask, 0);
}

RunResult run_cp_vit(const EncoderWeights& weights, const Tensor& input, const PruneOptions& options) {
    const double target = options.scheduler.base_ratio * static_cast<double>(weights.config.num_layers);
    return run_pruned(weights, input, Schedule::layer_aware, Selection::score, AblationMode::cp_vit, target, options);
}

RunResult run_ablation(const EncoderWeights& weights, const Tensor& input, AblationMode mode, double ratio,
                       std::uint64_t seed, const PruneOptions& base) {
    require_ratio(ratio, "target");
    PruneOptions options = base;
    options.scheduler.base_ratio = ratio / static_cast<double>(weights.config.num_layers);
    options.scheduler.seed = seed;
    switch (mode) {
        case AblationMode::cp_vit:
            return run_pruned(weights, input, Schedule::layer_aware, Selection::score, mode, ratio, options);
        case AblationMode::prediction_only:
            return run_pruned(weights, input, Schedule::uniform, Selection::score, mode, ratio, options);
        case AblationMode::pure_random:
            return run_pruned(weights, input, Schedule::uniform, Selection::random, mode, ratio, options);
    }
    throw ParameterError("unknown ablation mode");
}

FlopsReport flops_report(const PruneTrace& trace, const EncoderConfig& config) {
    const auto masks = trace.masks();
    return flops_report(std::span<const CascadeMask>(masks), config);
}

AgreementMetrics compare_logits(std::span<const Tensor> dense, std::span<const Tensor> pruned) {
    if (dense.size() != pruned.size()) throw DimensionError("compare_logits: batch sizes differ");
    AgreementMetrics metrics;
    metrics.samples = dense.size();
    if (dense.empty()) return metrics;
    std::size_t agree = 0;
    double drift = 0.0;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        if (dense[i].shape() != pruned[i].shape()) throw DimensionError("compare_logits: logit shapes differ");
        if (argmax(dense[i].data()) == argmax(pruned[i].data())) ++agree;
        double sq = 0.0;
        for (std::size_t j = 0; j < dense[i].size(); ++j) {
            const double d = dense[i][j] - pruned[i][j];
            sq += d * d;
        }
        drift += std::sqrt(sq);
    }
    metrics.top1_agreement = static_cast<double>(agree) / static_cast<double>(dense.size());
    metrics.mean_l2_drift = drift / static_cast<double>(dense.size());
    return metrics;
}

std::vector<std::vector<std::size_t>> first_layer_segments(const EncoderWeights& weights, const Tensor& input,
                                                           std::size_t num_segments) {
    const auto& config = weights.config;
    const CascadeMask dense = CascadeMask::dense(config.seq_len, config.num_heads);
    Tensor x = input;
    const AttentionStage stage = begin_layer(weights.layers.front(), config, x, dense);
    BinaryMask candidates = all_alive(config.seq_len);
    candidates[0] = 0;
    return segment_patches(stage.probability, num_segments, candidates);
}

SegmentAblationResult run_segment_ablation(const EncoderWeights& weights, std::span<const Tensor> inputs,
                                           std::size_t segment_id, std::size_t num_segments) {
    const auto& config = weights.config;
    if (segment_id > num_segments) {
        throw ParameterError("segment id " + std::to_string(segment_id) + " outside [0, " +
                             std::to_string(num_segments) + "]");
    }
    SegmentAblationResult result;
    result.segment_id = segment_id;
    result.num_segments = num_segments;

    std::vector<Tensor> dense_logits;
    double pruned_total = 0.0;
    for (const auto& input : inputs) {
        dense_logits.push_back(forward(weights, input).logits);
        CascadeMask mask = CascadeMask::dense(config.seq_len, config.num_heads);
        if (segment_id > 0) {
            const auto segments = first_layer_segments(weights, input, num_segments);
            for (std::size_t p : segments[segment_id - 1]) mask.patch_mask[p] = 0;
        }
        pruned_total += static_cast<double>(config.seq_len - mask.alive_patches());
        std::vector<CascadeMask> masks(config.num_layers, mask);
        for (std::size_t l = 0; l < masks.size(); ++l) masks[l].layer_index = l;
        result.logits.push_back(forward(weights, input, masks).logits);
    }
    result.metrics = compare_logits(dense_logits, result.logits);
    if (!inputs.empty()) result.mean_pruned_patches = pruned_total / static_cast<double>(inputs.size());
    return result;
}

}  // namespace cpvit
