#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpvit/encoder.hpp"
#include "cpvit/tensor.hpp"

namespace cpvit {

// Tensor archive layout, all integers little-endian:
//
//   "CPVT"            4 bytes magic
//   u16 version       currently 1
//   u16 reserved      0
//   u32 entry_count
//   entry_count x {
//     u16 name_len, name bytes (UTF-8, non-empty, unique)
//     u8 dtype          1 = f64
//     u8 rank
//     rank x u64        dims
//     u64 offset        byte offset into the payload, 8-byte multiples
//   }
//   u64 payload_size
//   payload           little-endian IEEE-754 doubles, no overlaps
//
// See docs/formats.md.

inline constexpr std::uint16_t archive_version = 1;

using TensorMap = std::map<std::string, Tensor>;
using NamedTensor = std::pair<std::string, Tensor>;

std::vector<std::byte> encode_archive(std::span<const NamedTensor> entries);
std::vector<std::byte> encode_archive(const TensorMap& entries);
TensorMap decode_archive(std::span<const std::byte> bytes);

void save_archive(const TensorMap& entries, const std::filesystem::path& path);
TensorMap load_archive(const std::filesystem::path& path);

/// Entry names for layer `i` follow `layer{i}.{wq|wk|wv|wo|ffn1|ffn2|ln1|ln2}`.
/// Affine groups hold the weight rows followed by one bias row; layer-norm
/// groups hold gamma then beta. The classifier adds `head.norm` and `head.fc`.
TensorMap encoder_to_archive(const EncoderWeights& weights);
EncoderWeights encoder_from_archive(const EncoderConfig& config, const TensorMap& entries);

std::string config_to_json(const EncoderConfig& config);
EncoderConfig config_from_json(const std::string& text);

/// Writes `<base>.cpvt` and its `<base>.json` config sidecar.
void save_encoder(const EncoderWeights& weights, const std::filesystem::path& base);

/// Accepts the archive or the sidecar path; the other is found by extension.
EncoderWeights load_encoder(const std::filesystem::path& path);

/// Pre-embedded inputs. A bundle holds `input` (L x E) or `inputs`
/// (N x L x E), optionally `labels` (N) and `reference_logits` (N x C).
struct InputBundle {
    std::vector<Tensor> inputs;
    std::vector<std::size_t> labels;
    std::vector<Tensor> reference_logits;
};

InputBundle load_inputs(const std::filesystem::path& path);
void save_inputs(const InputBundle& bundle, const std::filesystem::path& path);

}  // namespace cpvit
