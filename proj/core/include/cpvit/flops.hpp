#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cpvit/encoder.hpp"
#include "cpvit/mask.hpp"

namespace cpvit {

/// Encoder-block operation counts, one multiply-add = 2 FLOPs. Softmax,
/// layer norm, GELU, embeddings and the classifier are not counted.
///
///   mhsa = 2 L' E (3 H' D)     QKV projection of alive rows and heads
///        + 2 H' L'^2 D         scores
///        + 2 H' L'^2 D         attention times V
///        + 2 L' (H' D) E       output projection
///   ffn  = 2 L' E F + 2 L' F E
struct ComponentFlops {
    std::uint64_t mhsa = 0;
    std::uint64_t ffn = 0;

    std::uint64_t total() const noexcept { return mhsa + ffn; }
    friend bool operator==(const ComponentFlops&, const ComponentFlops&) = default;
};

/// Throws ParameterError when alive counts are 0 or exceed the config.
ComponentFlops layer_flops(const EncoderConfig& config, std::size_t alive_patches, std::size_t alive_heads);

struct LayerFlops {
    std::size_t alive_patches = 0;
    std::size_t alive_heads = 0;
    ComponentFlops dense;
    ComponentFlops pruned;
};

struct FlopsReport {
    std::vector<LayerFlops> layers;

    ComponentFlops dense_total() const noexcept;
    ComponentFlops pruned_total() const noexcept;
    /// 100 * (1 - pruned / dense)
    double saving_percent() const noexcept;
};

/// Prices every layer at the survivor counts of its mask against the dense
/// baseline of the same config.
FlopsReport flops_report(std::span<const CascadeMask> masks, const EncoderConfig& config);

}  // namespace cpvit
