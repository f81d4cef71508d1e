#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "cpvit/encoder.hpp"
#include "cpvit/flops.hpp"
#include "cpvit/mask.hpp"
#include "cpvit/scheduler.hpp"
#include "cpvit/scoring.hpp"

namespace cpvit {

enum class AblationMode { pure_random, prediction_only, cp_vit };

AblationMode parse_ablation_mode(std::string_view name);
const char* to_string(AblationMode mode) noexcept;

enum class RatioSemantics {
    cumulative,   // the ratio is the total fraction pruned so far
    incremental,  // the ratio is the fraction pruned at this layer on top of earlier layers
};

enum class HeadScoreRule {
    current_layer,  // a head gains the sum of this layer's per-patch maxima
    literal,        // a head gains the sum of the running patch scores
};

struct PruneOptions {
    SchedulerParams scheduler;
    ForwardOptions forward;
    RatioSemantics ratio_semantics = RatioSemantics::cumulative;
    HeadScoreRule head_scores = HeadScoreRule::current_layer;
};

struct LayerPruneRecord {
    CascadeMask mask;
    CumulativeScores scores;
    double patch_threshold = 0.0;
    double head_threshold = 0.0;
    double patch_ratio = 0.0;
    double head_ratio = 0.0;
    std::size_t pruned_patches = 0;  // total pruned after this layer
    std::size_t pruned_heads = 0;
    std::optional<RangeEstimate> range;  // set by the layer-aware schedule

    friend bool operator==(const LayerPruneRecord&, const LayerPruneRecord&) = default;
};

struct PruneTrace {
    AblationMode mode = AblationMode::cp_vit;
    double target_ratio = 0.0;
    SchedulerParams scheduler;
    std::vector<LayerPruneRecord> layers;

    std::vector<CascadeMask> masks() const;
};

struct RunResult {
    Tensor logits;
    Tensor output;
    PruneTrace trace;
    FlopsReport flops;
    ForwardTrace forward;
};

/// Total prune count floor(ratio * n), guarded against representation error.
std::size_t prune_count(double ratio, std::size_t n);

/// Cumulative-ratio cascade step. Keeps CLS, at least one other patch and
/// one head alive. Lowest scores go first, ties by index.
CascadeMask prune_layer(const CumulativeScores& scores, const CascadeMask& prev_mask, double patch_ratio,
                        double head_ratio, RatioSemantics semantics = RatioSemantics::cumulative);

/// Same survivor counts as prune_layer, victims drawn uniformly at random.
CascadeMask prune_random(const CascadeMask& prev_mask, double patch_ratio, double head_ratio, std::mt19937_64& rng,
                         RatioSemantics semantics = RatioSemantics::cumulative);

/// Smallest score among surviving prunable entities (patches skip CLS).
double patch_threshold(const CumulativeScores& scores, const CascadeMask& mask);
double head_threshold(const CumulativeScores& scores, const CascadeMask& mask);

/// Progressive sparsity prediction with the layer-aware ratio schedule.
RunResult run_cp_vit(const EncoderWeights& weights, const Tensor& input, const PruneOptions& options);

/// cp_vit: run_cp_vit with base ratio ratio / num_layers.
/// prediction_only: score-based selection, uniform increment ratio / num_layers.
/// pure_random: random selection on the uniform schedule.
RunResult run_ablation(const EncoderWeights& weights, const Tensor& input, AblationMode mode, double ratio,
                       std::uint64_t seed, const PruneOptions& base = {});

FlopsReport flops_report(const PruneTrace& trace, const EncoderConfig& config);

struct AgreementMetrics {
    std::size_t samples = 0;
    double top1_agreement = 1.0;  // fraction with the same argmax as dense
    double mean_l2_drift = 0.0;   // mean ||logits - dense||_2
};

AgreementMetrics compare_logits(std::span<const Tensor> dense, std::span<const Tensor> pruned);

struct SegmentAblationResult {
    std::size_t segment_id = 0;  // 0 prunes nothing
    std::size_t num_segments = 3;
    double mean_pruned_patches = 0.0;
    AgreementMetrics metrics;
    std::vector<Tensor> logits;
};

/// Prunes, in every layer, the patches of segment `segment_id` (1-based,
/// ascending mean incoming attention of the dense first layer, CLS excluded)
/// and measures logit drift against the dense run over the batch.
SegmentAblationResult run_segment_ablation(const EncoderWeights& weights, std::span<const Tensor> inputs,
                                           std::size_t segment_id, std::size_t num_segments = 3);

/// Segment masks for one input, as used by run_segment_ablation.
std::vector<std::vector<std::size_t>> first_layer_segments(const EncoderWeights& weights, const Tensor& input,
                                                           std::size_t num_segments = 3);

}  // namespace cpvit
