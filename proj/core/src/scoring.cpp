#include "cpvit/scoring.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "cpvit/error.hpp"

namespace cpvit {

namespace {

void require_attention(const Tensor& attention, const char* op) {
    if (attention.rank() != 3 || attention.dim(1) != attention.dim(2)) {
        throw DimensionError(std::string(op) + ": expected H x L x L attention, got " +
                             shape_string(attention.shape()));
    }
}

void require_index(std::size_t index, std::size_t bound, const char* what) {
    if (index >= bound) {
        throw ParameterError(std::string(what) + " index " + std::to_string(index) + " out of range [0, " +
                             std::to_string(bound) + ")");
    }
}

void require_masks(const Tensor& attention, const BinaryMask& patches, const BinaryMask& heads) {
    if (patches.size() != attention.dim(1) || heads.size() != attention.dim(0)) {
        throw DimensionError("mask lengths do not match attention shape " + shape_string(attention.shape()));
    }
}

double column_max(const Tensor& attention, std::size_t head, std::size_t patch) {
    double best = 0.0;
    for (std::size_t i = 0; i < attention.dim(1); ++i) best = std::max(best, attention.at(head, i, patch));
    return best;
}

}  // namespace

CumulativeScores CumulativeScores::zeros(std::size_t seq_len, std::size_t num_heads) {
    return CumulativeScores{std::vector<double>(seq_len, 0.0), std::vector<double>(num_heads, 0.0), 0};
}

double oracle_patch_informativeness(const Tensor& attention, std::size_t patch, std::size_t head, double alpha,
                                    double beta) {
    require_attention(attention, "oracle_patch_informativeness");
    require_index(head, attention.dim(0), "head");
    require_index(patch, attention.dim(1), "patch");
    double outgoing = 0.0, incoming = 0.0;
    for (std::size_t i = 0; i < attention.dim(2); ++i) outgoing += attention.at(head, patch, i);
    for (std::size_t j = 0; j < attention.dim(1); ++j) incoming += attention.at(head, j, patch);
    return alpha * outgoing + beta * incoming;
}

double oracle_layer_patch_informativeness(const Tensor& attention, std::size_t patch, double alpha, double beta) {
    require_attention(attention, "oracle_layer_patch_informativeness");
    double total = 0.0;
    for (std::size_t h = 0; h < attention.dim(0); ++h) {
        total += oracle_patch_informativeness(attention, patch, h, alpha, beta);
    }
    return total;
}

double oracle_head_informativeness(const Tensor& attention, std::size_t head) {
    require_attention(attention, "oracle_head_informativeness");
    require_index(head, attention.dim(0), "head");
    double total = 0.0;
    for (std::size_t i = 0; i < attention.dim(1); ++i) {
        for (std::size_t j = 0; j < attention.dim(2); ++j) total += attention.at(head, i, j);
    }
    return total;
}

ScoreDeltas fast_scores(const Tensor& attention, const BinaryMask& alive_patches, const BinaryMask& alive_heads) {
    require_attention(attention, "fast_scores");
    require_masks(attention, alive_patches, alive_heads);
    const std::size_t heads = attention.dim(0), len = attention.dim(1);
    ScoreDeltas deltas{std::vector<double>(len, 0.0), std::vector<double>(heads, 0.0)};
    for (std::size_t h = 0; h < heads; ++h) {
        if (!alive_heads[h]) continue;
        for (std::size_t p = 0; p < len; ++p) {
            if (!alive_patches[p]) continue;
            const double strongest = column_max(attention, h, p);
            deltas.patch[p] += strongest;
            deltas.head[h] += strongest;
        }
    }
    return deltas;
}

CumulativeScores accumulate(const CumulativeScores& scores, const ScoreDeltas& deltas) {
    if (deltas.patch.size() != scores.patch.size() || deltas.head.size() != scores.head.size()) {
        throw DimensionError("accumulate: delta lengths do not match the score vectors");
    }
    CumulativeScores next = scores;
    for (std::size_t p = 0; p < next.patch.size(); ++p) next.patch[p] += deltas.patch[p];
    for (std::size_t h = 0; h < next.head.size(); ++h) next.head[h] += deltas.head[h];
    ++next.layers_accumulated;
    return next;
}

CumulativeScores accumulate_literal(const CumulativeScores& scores, const Tensor& attention,
                                    const BinaryMask& alive_patches, const BinaryMask& alive_heads) {
    require_attention(attention, "accumulate_literal");
    require_masks(attention, alive_patches, alive_heads);
    CumulativeScores next = scores;
    for (std::size_t h = 0; h < attention.dim(0); ++h) {
        if (!alive_heads[h]) continue;
        for (std::size_t p = 0; p < attention.dim(1); ++p) {
            if (alive_patches[p]) next.patch[p] += column_max(attention, h, p);
        }
        next.head[h] += std::accumulate(next.patch.begin(), next.patch.end(), 0.0);
    }
    ++next.layers_accumulated;
    return next;
}

std::vector<double> mean_incoming_attention(const Tensor& attention) {
    require_attention(attention, "mean_incoming_attention");
    const std::size_t heads = attention.dim(0), len = attention.dim(1);
    std::vector<double> mean(len, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t p = 0; p < len; ++p) mean[p] += attention.at(h, i, p);
        }
    }
    for (auto& v : mean) v /= static_cast<double>(heads * len);
    return mean;
}

std::vector<std::vector<std::size_t>> segment_patches(const Tensor& attention, std::size_t num_segments,
                                                      const BinaryMask& alive) {
    require_attention(attention, "segment_patches");
    const std::size_t len = attention.dim(1);
    if (num_segments < 2) throw ParameterError("segment_patches: need at least 2 segments");
    if (!alive.empty() && alive.size() != len) throw DimensionError("segment_patches: mask length mismatch");

    std::vector<std::size_t> order;
    for (std::size_t p = 0; p < len; ++p) {
        if (alive.empty() || alive[p]) order.push_back(p);
    }
    if (order.size() < num_segments) {
        throw ParameterError("segment_patches: " + std::to_string(order.size()) + " patches cannot fill " +
                             std::to_string(num_segments) + " segments");
    }
    const std::vector<double> mean = mean_incoming_attention(attention);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean[a] < mean[b]; });

    const std::size_t base = order.size() / num_segments;
    const std::size_t extra = order.size() % num_segments;
    std::vector<std::vector<std::size_t>> segments(num_segments);
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < num_segments; ++s) {
        const std::size_t size = base + (s >= num_segments - extra ? 1 : 0);
        segments[s].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                           order.begin() + static_cast<std::ptrdiff_t>(cursor + size));
        cursor += size;
    }
    return segments;
}

}  // namespace cpvit
