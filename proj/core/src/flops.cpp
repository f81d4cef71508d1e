#include "cpvit/flops.hpp"

#include <string>

#include "cpvit/error.hpp"

namespace cpvit {

ComponentFlops layer_flops(const EncoderConfig& config, std::size_t alive_patches, std::size_t alive_heads) {
    if (alive_patches == 0 || alive_patches > config.seq_len) {
        throw ParameterError("layer_flops: alive patches " + std::to_string(alive_patches) + " outside [1, " +
                             std::to_string(config.seq_len) + "]");
    }
    if (alive_heads == 0 || alive_heads > config.num_heads) {
        throw ParameterError("layer_flops: alive heads " + std::to_string(alive_heads) + " outside [1, " +
                             std::to_string(config.num_heads) + "]");
    }
    const std::uint64_t l = alive_patches, h = alive_heads;
    const std::uint64_t d = config.head_dim, e = config.embed_dim, f = config.ffn_hidden;

    ComponentFlops flops;
    flops.mhsa = 2 * l * e * (3 * h * d)  // QKV
                 + 2 * h * l * l * d      // scores
                 + 2 * h * l * l * d      // A * V
                 + 2 * l * (h * d) * e;   // output projection
    flops.ffn = 2 * l * e * f + 2 * l * f * e;
    return flops;
}

ComponentFlops FlopsReport::dense_total() const noexcept {
    ComponentFlops total;
    for (const auto& layer : layers) {
        total.mhsa += layer.dense.mhsa;
        total.ffn += layer.dense.ffn;
    }
    return total;
}

ComponentFlops FlopsReport::pruned_total() const noexcept {
    ComponentFlops total;
    for (const auto& layer : layers) {
        total.mhsa += layer.pruned.mhsa;
        total.ffn += layer.pruned.ffn;
    }
    return total;
}

double FlopsReport::saving_percent() const noexcept {
    const auto dense = dense_total().total();
    if (dense == 0) return 0.0;
    return 100.0 * (1.0 - static_cast<double>(pruned_total().total()) / static_cast<double>(dense));
}

FlopsReport flops_report(std::span<const CascadeMask> masks, const EncoderConfig& config) {
    FlopsReport report;
    const ComponentFlops dense = layer_flops(config, config.seq_len, config.num_heads);
    for (const auto& mask : masks) {
        LayerFlops layer;
        layer.alive_patches = mask.alive_patches();
        layer.alive_heads = mask.alive_heads();
        layer.dense = dense;
        layer.pruned = layer_flops(config, layer.alive_patches, layer.alive_heads);
        report.layers.push_back(layer);
    }
    return report;
}

}  // namespace cpvit
