#include "cpvit/mask.hpp"

#include <algorithm>
#include <string>

#include "cpvit/error.hpp"

namespace cpvit {

BinaryMask all_alive(std::size_t n) { return BinaryMask(n, 1); }

std::size_t count_alive(const BinaryMask& mask) noexcept {
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }));
}

bool is_subset(const BinaryMask& next, const BinaryMask& prev) noexcept {
    if (next.size() != prev.size()) return false;
    for (std::size_t i = 0; i < next.size(); ++i) {
        if (next[i] && !prev[i]) return false;
    }
    return true;
}

CascadeMask CascadeMask::dense(std::size_t seq_len, std::size_t num_heads, std::size_t layer_index) {
    return CascadeMask{all_alive(seq_len), all_alive(num_heads), layer_index};
}

void validate_cascade(const CascadeMask& mask, std::size_t seq_len, std::size_t num_heads, const CascadeMask* prev) {
    const std::string where = "layer " + std::to_string(mask.layer_index) + ": ";
    if (mask.patch_mask.size() != seq_len || mask.head_mask.size() != num_heads) {
        throw ConfigError(where + "mask lengths (" + std::to_string(mask.patch_mask.size()) + ", " +
                          std::to_string(mask.head_mask.size()) + ") do not match L=" + std::to_string(seq_len) +
                          ", H=" + std::to_string(num_heads));
    }
    if (!mask.patch_mask[0]) throw ConfigError(where + "classification token is pruned");
    if (mask.alive_patches() < 2) throw ConfigError(where + "fewer than two surviving patches");
    if (mask.alive_heads() < 1) throw ConfigError(where + "no surviving heads");
    if (prev != nullptr) {
        if (!is_subset(mask.patch_mask, prev->patch_mask)) throw ConfigError(where + "a pruned patch was revived");
        if (!is_subset(mask.head_mask, prev->head_mask)) throw ConfigError(where + "a pruned head was revived");
    }
}

}  // namespace cpvit
