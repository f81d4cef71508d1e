#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "cpvit/mask.hpp"
#include "cpvit/tensor.hpp"

namespace cpvit {

enum class OrdinateSampling {
    random,      // k ordinates drawn uniformly with replacement
    exhaustive,  // every eligible row exactly once
};

enum class HeadCounting {
    all_heads,    // every alive head votes for each ordinate
    single_head,  // only `counted_head` votes
};

/// Layer-aware ratio parameters. `base_ratio` is the per-layer increment r in
/// r_l = r_{l-1} + r * attention_range.
struct SchedulerParams {
    std::size_t k = 32;
    std::size_t delta = 2;
    double eta = 1.0;
    double base_ratio = 0.0;
    double head_ratio_coeff = 0.5;
    double max_ratio = 0.95;
    std::uint64_t seed = 0;
    OrdinateSampling sampling = OrdinateSampling::random;
    HeadCounting head_counting = HeadCounting::all_heads;
    std::size_t counted_head = 0;
    /// Keeps the CLS row out of the sampled ordinates.
    bool exclude_cls = true;

    /// base_ratio = target / num_layers, so a layer-aware run whose every
    /// layer is long-range ends exactly at `target`.
    static SchedulerParams for_target(double target, std::size_t num_layers);

    /// Throws ParameterError when a field is outside its range.
    void validate() const;
};

struct RangeEstimate {
    std::size_t short_range_count = 0;  // C_sr
    std::size_t votes = 0;              // ordinates x counted heads
    double attention_range = 1.0;       // 1 - eta * C_sr / votes

    friend bool operator==(const RangeEstimate&, const RangeEstimate&) = default;
};

/// Uniform draw from [0, n) that only depends on the generator's output
/// sequence, so seeded runs agree across standard libraries.
std::size_t uniform_index(std::mt19937_64& rng, std::size_t n);

/// Samples query rows, takes the argmax column of each alive head's row and
/// counts |argmax - row| < delta as short-range. Rows are drawn from alive
/// patches only (CLS excluded when params.exclude_cls). Empty masks mean
/// everything is alive.
RangeEstimate estimate_attention_range(const Tensor& attention, const SchedulerParams& params, std::mt19937_64& rng,
                                       const BinaryMask& alive_patches = {}, const BinaryMask& alive_heads = {});

struct RatioStep {
    RangeEstimate range;
    double ratio = 0.0;
};

struct RatioState {
    double r_prev = 0.0;
    std::vector<RatioStep> history;
};

/// r_l = min(r_{l-1} + base_ratio * attention_range, max_ratio).
RatioState next_ratio(const RatioState& state, const RangeEstimate& range, const SchedulerParams& params);
RatioState next_ratio(const RatioState& state, double attention_range, const SchedulerParams& params);

/// coeff * patch_ratio, capped at (H - 1) / H so one head always survives.
double head_ratio(double patch_ratio, std::size_t num_heads, double coeff);

}  // namespace cpvit
