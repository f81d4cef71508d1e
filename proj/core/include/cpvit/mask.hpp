#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace cpvit {

/// One byte per entity, 1 = alive, 0 = pruned.
using BinaryMask = std::vector<std::uint8_t>;

BinaryMask all_alive(std::size_t n);
std::size_t count_alive(const BinaryMask& mask) noexcept;

/// true when every alive entry of `next` is alive in `prev`.
bool is_subset(const BinaryMask& next, const BinaryMask& prev) noexcept;

/// Survivor sets for one layer. Index 0 of the patch mask is the CLS token.
struct CascadeMask {
    BinaryMask patch_mask;
    BinaryMask head_mask;
    std::size_t layer_index = 0;

    static CascadeMask dense(std::size_t seq_len, std::size_t num_heads, std::size_t layer_index = 0);

    std::size_t alive_patches() const noexcept { return count_alive(patch_mask); }
    std::size_t alive_heads() const noexcept { return count_alive(head_mask); }

    friend bool operator==(const CascadeMask&, const CascadeMask&) = default;
};

/// Checks the cascade invariants of `mask` (CLS alive, at least one head and
/// two patches, shapes) and, when `prev` is given, monotone shrink against
/// it. Throws ConfigError on violation.
void validate_cascade(const CascadeMask& mask, std::size_t seq_len, std::size_t num_heads,
                      const CascadeMask* prev = nullptr);

}  // namespace cpvit
