#pragma once

// Test-only reference implementations. Everything here is written with plain
// nested loops over std::vector and must not call the engine's kernels.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cpvit/encoder.hpp"
#include "cpvit/mask.hpp"
#include "cpvit/tensor.hpp"

namespace cpvit::oracle {

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t);
Matrix naive_matmul(const Matrix& a, const Matrix& b);

/// Forward pass under per-layer masks (empty = dense) following the engine's
/// semantics: pruned rows zeroed, pruned heads dropped from the merge, softmax
/// over surviving columns only.
std::vector<double> naive_forward_logits(const EncoderWeights& weights, const Tensor& input,
                                         const std::vector<CascadeMask>& masks = {});

double naive_patch_informativeness(const Tensor& attention, std::size_t patch, std::size_t head, double alpha,
                                   double beta);
double naive_layer_patch_informativeness(const Tensor& attention, std::size_t patch, double alpha, double beta);
double naive_head_informativeness(const Tensor& attention, std::size_t head);

struct NaiveDeltas {
    std::vector<double> patch;
    std::vector<double> head;
};

/// Column maxima summed over alive heads (patches) and over alive patches (heads).
NaiveDeltas naive_column_max_deltas(const Tensor& attention, const BinaryMask& patches, const BinaryMask& heads);

struct ShortRangeCount {
    std::size_t hits = 0;
    std::size_t votes = 0;
    std::vector<double> per_row_fraction;  // hits / alive heads, one entry per eligible row
};

/// Scans every eligible row once: alive, and not CLS when `exclude_cls`.
ShortRangeCount brute_force_short_range(const Tensor& attention, std::size_t delta, const BinaryMask& patches,
                                        const BinaryMask& heads, bool exclude_cls);

/// Multiply-adds of one block with `alive_patches` rows and `alive_heads`
/// heads, enumerated loop by loop.
std::uint64_t enumerate_block_macs(const EncoderConfig& config, std::size_t alive_patches, std::size_t alive_heads);

/// Row-stochastic H x L x L tensor (softmax of normal logits scaled by `temperature`).
Tensor random_attention(std::size_t heads, std::size_t seq_len, std::uint64_t seed, double temperature = 1.0);

/// Every row puts at least 0.9 on column `dominant`; the rest is spread randomly.
Tensor dominant_column_attention(std::size_t heads, std::size_t seq_len, std::size_t dominant, std::uint64_t seed);

Tensor identity_attention(std::size_t heads, std::size_t seq_len);

Tensor random_tensor(const Shape& shape, std::uint64_t seed);

}  // namespace cpvit::oracle
