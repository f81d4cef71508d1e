#pragma once

#include <string>

#include "cpvit/encoder.hpp"
#include "cpvit/flops.hpp"
#include "cpvit/pruner.hpp"

namespace cpvit {

// Emitters for the documented report formats (docs/formats.md and the JSON
// schemas next to it). Output is byte-deterministic for a given input.

/// `trace.json`: run metadata, scheduler parameters and one object per layer.
std::string trace_to_json(const PruneTrace& trace, const EncoderConfig& config, const FlopsReport& flops);

/// `masks.csv`: layer,kind,index,alive,score
std::string masks_to_csv(const PruneTrace& trace);

/// `flops.csv`: layer,alive_patches,alive_heads,dense_mhsa,dense_ffn,pruned_mhsa,pruned_ffn
/// followed by a `total` row.
std::string flops_to_csv(const FlopsReport& flops);
std::string flops_to_json(const FlopsReport& flops);

/// Fixed two-decimal rendering used in summary lines and tables.
std::string format_percent(double percent);

}  // namespace cpvit
