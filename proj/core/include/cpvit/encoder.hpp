#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cpvit/mask.hpp"
#include "cpvit/tensor.hpp"

namespace cpvit {

struct EncoderConfig {
    std::size_t num_layers = 1;
    std::size_t num_heads = 1;
    /// Sequence length including the classification token at index 0.
    std::size_t seq_len = 2;
    std::size_t head_dim = 1;
    std::size_t embed_dim = 1;
    std::size_t ffn_hidden = 4;
    /// 0 when the model carries no classifier head.
    std::size_t num_classes = 0;
    double ln_eps = 1e-6;

    /// Throws ConfigError unless all fields are positive and E == H*D.
    void validate() const;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Projection matrices are stored input-major, i.e. y = x * W + b.
struct LayerWeights {
    Tensor wq, bq, wk, bk, wv, bv;
    Tensor wo, bo;
    Tensor w1, b1, w2, b2;
    Tensor ln1_gamma, ln1_beta;
    Tensor ln2_gamma, ln2_beta;
};

/// Final layer norm on the CLS row followed by a linear readout.
struct Classifier {
    Tensor norm_gamma, norm_beta;
    Tensor w, b;
};

struct EncoderWeights {
    EncoderConfig config;
    std::vector<LayerWeights> layers;
    std::optional<Classifier> classifier;

    /// Shape and finiteness checks against `config`; throws ModelError naming the entry.
    void validate() const;
};

struct ForwardOptions {
    /// Renormalize attention over surviving patches after pruning. When off,
    /// the probabilities computed under the previous layer's mask are reused
    /// with the newly pruned columns zeroed.
    bool renormalize = true;
};

struct LayerTrace {
    Tensor attention_scores;       // H x L x L, Q K^T / sqrt(D); 0 where skipped
    Tensor attention_probability;  // H x L x L, the probabilities multiplied into V
    Tensor input;                  // L x E residual stream entering the block
    Tensor output;                 // L x E residual stream leaving the block
    CascadeMask mask;
    std::uint64_t macs = 0;        // multiply-adds executed by this block
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;
};

struct ForwardResult {
    Tensor output;  // L x E
    Tensor logits;  // num_classes, or the CLS row (E) without a classifier
    ForwardTrace trace;
};

/// Everything computed in a block up to the attention probabilities.
struct AttentionStage {
    Tensor q, k, v;                // L x E
    Tensor scores;                 // H x L x L
    Tensor probability;            // H x L x L, softmax over `mask` survivors
    CascadeMask mask;              // mask the stage was computed under
    std::uint64_t macs = 0;
};

/// Runs layer norm, QKV projection and scaled dot products for the rows and
/// heads alive in `mask`, then the masked softmax.
AttentionStage begin_layer(const LayerWeights& layer, const EncoderConfig& config, const Tensor& x,
                           const CascadeMask& mask);

/// Completes the block from `stage` under `mask` (a subset of stage.mask):
/// A*V, head merge, output projection, residual, FFN, residual. Rows of
/// pruned patches leave the block as zeros.
Tensor finish_layer(const LayerWeights& layer, const EncoderConfig& config, const Tensor& x, AttentionStage stage,
                    const CascadeMask& mask, const ForwardOptions& options = {}, LayerTrace* trace = nullptr);

/// Classifier readout (or the CLS row when no classifier is present).
Tensor readout(const EncoderWeights& weights, const Tensor& output);

/// Full forward pass. `masks` is empty for a dense run, otherwise holds one
/// mask per layer.
ForwardResult forward(const EncoderWeights& weights, const Tensor& input, std::span<const CascadeMask> masks = {},
                      const ForwardOptions& options = {});

/// Dense per-layer attention probabilities (H x L x L each).
std::vector<Tensor> record_attention(const EncoderWeights& weights, const Tensor& input);

/// Gaussian-initialized model for tests and synthetic runs.
EncoderWeights random_encoder(const EncoderConfig& config, std::uint64_t seed, double scale = 1.0);

/// L x E standard-normal input.
Tensor random_input(std::size_t seq_len, std::size_t embed_dim, std::uint64_t seed);

}  // namespace cpvit
