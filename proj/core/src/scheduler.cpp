#include "cpvit/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cpvit/error.hpp"

namespace cpvit {

SchedulerParams SchedulerParams::for_target(double target, std::size_t num_layers) {
    if (!(target >= 0.0 && target < 1.0)) throw ParameterError("target ratio must lie in [0, 1)");
    if (num_layers == 0) throw ParameterError("for_target: num_layers must be positive");
    SchedulerParams params;
    params.base_ratio = target / static_cast<double>(num_layers);
    return params;
}

void SchedulerParams::validate() const {
    if (k == 0) throw ParameterError("scheduler: k must be >= 1");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("scheduler: eta must lie in [0, 1]");
    if (!(base_ratio >= 0.0 && base_ratio < 1.0)) throw ParameterError("scheduler: base ratio must lie in [0, 1)");
    if (!(max_ratio >= 0.0 && max_ratio < 1.0)) throw ParameterError("scheduler: max ratio must lie in [0, 1)");
    if (!(head_ratio_coeff >= 0.0 && head_ratio_coeff <= 1.0)) {
        throw ParameterError("scheduler: head ratio coefficient must lie in [0, 1]");
    }
}

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    if (n == 0) throw ParameterError("uniform_index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    // rejection sampling removes modulo bias
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw = rng();
    while (draw >= limit) draw = rng();
    return static_cast<std::size_t>(draw % bound);
}

RangeEstimate estimate_attention_range(const Tensor& attention, const SchedulerParams& params, std::mt19937_64& rng,
                                       const BinaryMask& alive_patches, const BinaryMask& alive_heads) {
    params.validate();
    if (attention.rank() != 3 || attention.dim(1) != attention.dim(2)) {
        throw DimensionError("estimate_attention_range: expected H x L x L, got " + shape_string(attention.shape()));
    }
    const std::size_t heads = attention.dim(0), len = attention.dim(1);
    const BinaryMask patches = alive_patches.empty() ? all_alive(len) : alive_patches;
    const BinaryMask alive_h = alive_heads.empty() ? all_alive(heads) : alive_heads;
    if (patches.size() != len || alive_h.size() != heads) {
        throw DimensionError("estimate_attention_range: mask lengths do not match attention");
    }

    std::vector<std::size_t> eligible;
    for (std::size_t i = params.exclude_cls ? 1 : 0; i < len; ++i) {
        if (patches[i]) eligible.push_back(i);
    }
    std::vector<std::size_t> counted;
    if (params.head_counting == HeadCounting::single_head) {
        if (params.counted_head >= heads) throw ParameterError("scheduler: counted head out of range");
        if (alive_h[params.counted_head]) counted.push_back(params.counted_head);
    } else {
        for (std::size_t h = 0; h < heads; ++h) {
            if (alive_h[h]) counted.push_back(h);
        }
    }

    RangeEstimate estimate;
    if (eligible.empty() || counted.empty()) return estimate;

    std::vector<std::size_t> ordinates;
    if (params.sampling == OrdinateSampling::exhaustive) {
        ordinates = eligible;
    } else {
        ordinates.reserve(params.k);
        for (std::size_t s = 0; s < params.k; ++s) ordinates.push_back(eligible[uniform_index(rng, eligible.size())]);
    }

    for (std::size_t row : ordinates) {
        for (std::size_t h : counted) {
            std::size_t best = 0;
            double best_value = -1.0;
            for (std::size_t j = 0; j < len; ++j) {
                if (!patches[j]) continue;
                const double v = attention.at(h, row, j);
                if (v > best_value) {
                    best_value = v;
                    best = j;
                }
            }
            const std::size_t distance = best > row ? best - row : row - best;
            if (distance < params.delta) ++estimate.short_range_count;
        }
    }
    estimate.votes = ordinates.size() * counted.size();
    estimate.attention_range =
        1.0 - params.eta * static_cast<double>(estimate.short_range_count) / static_cast<double>(estimate.votes);
    return estimate;
}

RatioState next_ratio(const RatioState& state, const RangeEstimate& range, const SchedulerParams& params) {
    params.validate();
    if (!(range.attention_range >= 0.0 && range.attention_range <= 1.0)) {
        throw ParameterError("next_ratio: attention range must lie in [0, 1]");
    }
    RatioState next = state;
    next.r_prev = std::min(state.r_prev + params.base_ratio * range.attention_range, params.max_ratio);
    next.history.push_back(RatioStep{range, next.r_prev});
    return next;
}

RatioState next_ratio(const RatioState& state, double attention_range, const SchedulerParams& params) {
    RangeEstimate range;
    range.attention_range = attention_range;
    return next_ratio(state, range, params);
}

double head_ratio(double patch_ratio, std::size_t num_heads, double coeff) {
    if (num_heads == 0) throw ParameterError("head_ratio: num_heads must be positive");
    const double cap = static_cast<double>(num_heads - 1) / static_cast<double>(num_heads);
    return std::min(coeff * patch_ratio, cap);
}

}  // namespace cpvit
