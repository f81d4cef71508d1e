#include "cpvit/encoder.hpp"

#include <cmath>
#include <random>
#include <string>

#include "cpvit/error.hpp"

namespace cpvit {

namespace {

BinaryMask head_channels(const BinaryMask& head_mask, std::size_t head_dim) {
    BinaryMask channels(head_mask.size() * head_dim, 0);
    for (std::size_t h = 0; h < head_mask.size(); ++h) {
        for (std::size_t d = 0; d < head_dim; ++d) channels[h * head_dim + d] = head_mask[h];
    }
    return channels;
}

void add_bias(Tensor& x, const Tensor& bias, const BinaryMask& rows, const BinaryMask& cols) {
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (!rows[r]) continue;
        auto row = x.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (cols.empty() || cols[j]) row[j] += bias[j];
        }
    }
}

void add_into(Tensor& x, const Tensor& y) {
    auto xd = x.data();
    auto yd = y.data();
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += yd[i];
}

/// Zeroes pruned heads entirely and pruned query rows of the alive heads.
void zero_pruned_attention(Tensor& attention, const CascadeMask& mask) {
    const std::size_t heads = attention.dim(0), len = attention.dim(1);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < len; ++i) {
            if (mask.head_mask[h] && mask.patch_mask[i]) continue;
            auto row = attention.row(h * len + i);
            std::fill(row.begin(), row.end(), 0.0);
        }
    }
}

void require_shape(const Tensor& t, const Shape& expected, const std::string& name) {
    if (t.shape() != expected) {
        throw ModelError(name, "entry " + name + " has shape " + shape_string(t.shape()) + ", expected " +
                                   shape_string(expected));
    }
    if (!t.all_finite()) throw ModelError(name, "entry " + name + " contains non-finite values");
}

void check_forward_mask(const CascadeMask& mask, const EncoderConfig& config, std::size_t layer) {
    const std::string where = "mask for layer " + std::to_string(layer) + ": ";
    if (mask.patch_mask.size() != config.seq_len || mask.head_mask.size() != config.num_heads) {
        throw ConfigError(where + "lengths do not match the model");
    }
    if (!mask.patch_mask[0]) throw ConfigError(where + "classification token is pruned");
    if (mask.alive_patches() == 0) throw ConfigError(where + "no surviving patches");
    if (mask.alive_heads() == 0) throw ConfigError(where + "no surviving heads");
}

}  // namespace

void EncoderConfig::validate() const {
    if (num_layers == 0 || num_heads == 0 || head_dim == 0 || embed_dim == 0 || ffn_hidden == 0) {
        throw ConfigError("encoder config: all dimensions must be positive");
    }
    if (seq_len < 2) throw ConfigError("encoder config: seq_len must be at least 2 (CLS + one patch)");
    if (embed_dim != num_heads * head_dim) {
        throw ConfigError("encoder config: embed_dim " + std::to_string(embed_dim) + " != num_heads * head_dim (" +
                          std::to_string(num_heads) + " * " + std::to_string(head_dim) + ")");
    }
    if (!(ln_eps >= 0.0) || !std::isfinite(ln_eps)) throw ConfigError("encoder config: ln_eps must be >= 0");
}

void EncoderWeights::validate() const {
    config.validate();
    if (layers.size() != config.num_layers) {
        throw ConfigError("encoder has " + std::to_string(layers.size()) + " layers, config says " +
                          std::to_string(config.num_layers));
    }
    const std::size_t e = config.embed_dim, f = config.ffn_hidden;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& lw = layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        require_shape(lw.wq, {e, e}, p + "wq");
        require_shape(lw.bq, {e}, p + "wq.bias");
        require_shape(lw.wk, {e, e}, p + "wk");
        require_shape(lw.bk, {e}, p + "wk.bias");
        require_shape(lw.wv, {e, e}, p + "wv");
        require_shape(lw.bv, {e}, p + "wv.bias");
        require_shape(lw.wo, {e, e}, p + "wo");
        require_shape(lw.bo, {e}, p + "wo.bias");
        require_shape(lw.w1, {e, f}, p + "ffn1");
        require_shape(lw.b1, {f}, p + "ffn1.bias");
        require_shape(lw.w2, {f, e}, p + "ffn2");
        require_shape(lw.b2, {e}, p + "ffn2.bias");
        require_shape(lw.ln1_gamma, {e}, p + "ln1.gamma");
        require_shape(lw.ln1_beta, {e}, p + "ln1.beta");
        require_shape(lw.ln2_gamma, {e}, p + "ln2.gamma");
        require_shape(lw.ln2_beta, {e}, p + "ln2.beta");
    }
    if (classifier.has_value() != (config.num_classes > 0)) {
        throw ConfigError("classifier presence does not match num_classes = " + std::to_string(config.num_classes));
    }
    if (classifier) {
        require_shape(classifier->norm_gamma, {e}, "head.norm.gamma");
        require_shape(classifier->norm_beta, {e}, "head.norm.beta");
        require_shape(classifier->w, {e, config.num_classes}, "head.fc");
        require_shape(classifier->b, {config.num_classes}, "head.fc.bias");
    }
}

AttentionStage begin_layer(const LayerWeights& layer, const EncoderConfig& config, const Tensor& x,
                           const CascadeMask& mask) {
    const std::size_t len = config.seq_len, heads = config.num_heads, hd = config.head_dim;
    MacCountScope macs;

    Tensor normed = layer_norm(x, layer.ln1_gamma, layer.ln1_beta, config.ln_eps);
    zero_masked_rows(normed, mask.patch_mask);

    const BinaryMask channels = head_channels(mask.head_mask, hd);
    const MatmulSelection sel{mask.patch_mask, {}, channels};
    AttentionStage stage;
    stage.q = matmul(normed, layer.wq, sel);
    stage.k = matmul(normed, layer.wk, sel);
    stage.v = matmul(normed, layer.wv, sel);
    add_bias(stage.q, layer.bq, mask.patch_mask, channels);
    add_bias(stage.k, layer.bk, mask.patch_mask, channels);
    add_bias(stage.v, layer.bv, mask.patch_mask, channels);

    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    stage.scores = Tensor({heads, len, len});
    std::uint64_t score_macs = 0;
    for (std::size_t h = 0; h < heads; ++h) {
        if (!mask.head_mask[h]) continue;
        for (std::size_t i = 0; i < len; ++i) {
            if (!mask.patch_mask[i]) continue;
            const auto qi = stage.q.row(i).subspan(h * hd, hd);
            for (std::size_t j = 0; j < len; ++j) {
                if (!mask.patch_mask[j]) continue;
                const auto kj = stage.k.row(j).subspan(h * hd, hd);
                double dot = 0.0;
                for (std::size_t d = 0; d < hd; ++d) dot += qi[d] * kj[d];
                stage.scores.at(h, i, j) = dot * scale;
                score_macs += hd;
            }
        }
    }
    add_mac_count(score_macs);

    stage.probability = masked_softmax_rows(stage.scores, mask.patch_mask);
    zero_pruned_attention(stage.probability, mask);
    stage.mask = mask;
    stage.macs = macs.count();
    return stage;
}

Tensor finish_layer(const LayerWeights& layer, const EncoderConfig& config, const Tensor& x, AttentionStage stage,
                    const CascadeMask& mask, const ForwardOptions& options, LayerTrace* trace) {
    const std::size_t len = config.seq_len, heads = config.num_heads, hd = config.head_dim;
    if (!is_subset(mask.patch_mask, stage.mask.patch_mask) || !is_subset(mask.head_mask, stage.mask.head_mask)) {
        throw ConfigError("finish_layer: mask is not a subset of the attention stage mask");
    }
    MacCountScope macs;

    Tensor probability;
    if (mask.patch_mask == stage.mask.patch_mask && mask.head_mask == stage.mask.head_mask) {
        probability = std::move(stage.probability);
    } else if (options.renormalize) {
        probability = masked_softmax_rows(stage.scores, mask.patch_mask);
    } else {
        probability = std::move(stage.probability);
        for (std::size_t r = 0; r < probability.rows(); ++r) {
            auto row = probability.row(r);
            for (std::size_t j = 0; j < len; ++j) {
                if (!mask.patch_mask[j]) row[j] = 0.0;
            }
        }
    }
    zero_pruned_attention(probability, mask);

    // per-head A * V into the merged context
    Tensor context({len, config.embed_dim});
    std::uint64_t mix_macs = 0;
    for (std::size_t h = 0; h < heads; ++h) {
        if (!mask.head_mask[h]) continue;
        for (std::size_t i = 0; i < len; ++i) {
            if (!mask.patch_mask[i]) continue;
            auto ci = context.row(i).subspan(h * hd, hd);
            for (std::size_t j = 0; j < len; ++j) {
                if (!mask.patch_mask[j]) continue;
                const double p = probability.at(h, i, j);
                const auto vj = stage.v.row(j).subspan(h * hd, hd);
                for (std::size_t d = 0; d < hd; ++d) ci[d] += p * vj[d];
                mix_macs += hd;
            }
        }
    }
    add_mac_count(mix_macs);

    const BinaryMask channels = head_channels(mask.head_mask, hd);
    Tensor attended = matmul(context, layer.wo, MatmulSelection{mask.patch_mask, channels, {}});
    add_bias(attended, layer.bo, mask.patch_mask, {});

    Tensor hidden = x;
    add_into(hidden, attended);
    zero_masked_rows(hidden, mask.patch_mask);

    Tensor normed = layer_norm(hidden, layer.ln2_gamma, layer.ln2_beta, config.ln_eps);
    zero_masked_rows(normed, mask.patch_mask);
    Tensor inner = matmul(normed, layer.w1, MatmulSelection{mask.patch_mask, {}, {}});
    add_bias(inner, layer.b1, mask.patch_mask, {});
    inner = gelu(inner);
    Tensor ffn = matmul(inner, layer.w2, MatmulSelection{mask.patch_mask, {}, {}});
    add_bias(ffn, layer.b2, mask.patch_mask, {});

    add_into(hidden, ffn);
    zero_masked_rows(hidden, mask.patch_mask);

    if (trace != nullptr) {
        trace->attention_scores = std::move(stage.scores);
        trace->attention_probability = std::move(probability);
        trace->input = x;
        trace->output = hidden;
        trace->mask = mask;
        trace->macs = stage.macs + macs.count();
    }
    return hidden;
}

Tensor readout(const EncoderWeights& weights, const Tensor& output) {
    const auto cls_row = output.row(0);
    if (!weights.classifier) return Tensor::vector(std::vector<double>(cls_row.begin(), cls_row.end()));
    Tensor cls({1, weights.config.embed_dim}, std::vector<double>(cls_row.begin(), cls_row.end()));
    const auto& head = *weights.classifier;
    Tensor z = layer_norm(cls, head.norm_gamma, head.norm_beta, weights.config.ln_eps);
    Tensor logits = matmul(z, head.w);
    add_row_bias(logits, head.b);
    return Tensor({weights.config.num_classes}, std::vector<double>(logits.data().begin(), logits.data().end()));
}

ForwardResult forward(const EncoderWeights& weights, const Tensor& input, std::span<const CascadeMask> masks,
                      const ForwardOptions& options) {
    const auto& config = weights.config;
    config.validate();
    if (input.shape() != Shape{config.seq_len, config.embed_dim}) {
        throw DimensionError("forward: input shape " + shape_string(input.shape()) + ", model expects " +
                             shape_string({config.seq_len, config.embed_dim}));
    }
    if (!masks.empty() && masks.size() != config.num_layers) {
        throw ConfigError("forward: got " + std::to_string(masks.size()) + " masks for " +
                          std::to_string(config.num_layers) + " layers");
    }
    for (std::size_t l = 0; l < masks.size(); ++l) check_forward_mask(masks[l], config, l);

    ForwardResult result;
    result.trace.layers.resize(config.num_layers);
    Tensor x = input;
    const CascadeMask dense = CascadeMask::dense(config.seq_len, config.num_heads);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        CascadeMask mask = masks.empty() ? dense : masks[l];
        mask.layer_index = l;
        if (l == 0) zero_masked_rows(x, mask.patch_mask);
        // without renormalization the softmax is taken under the previous layer's survivors
        CascadeMask stage_mask = mask;
        if (!options.renormalize && !masks.empty() && l > 0) {
            stage_mask = masks[l - 1];
            if (!is_subset(mask.patch_mask, stage_mask.patch_mask) ||
                !is_subset(mask.head_mask, stage_mask.head_mask)) {
                throw ConfigError("forward: masks must shrink monotonically without renormalization");
            }
        }
        AttentionStage stage = begin_layer(weights.layers[l], config, x, stage_mask);
        x = finish_layer(weights.layers[l], config, x, std::move(stage), mask, options, &result.trace.layers[l]);
    }
    result.logits = readout(weights, x);
    result.output = std::move(x);
    return result;
}

std::vector<Tensor> record_attention(const EncoderWeights& weights, const Tensor& input) {
    ForwardResult result = forward(weights, input);
    std::vector<Tensor> records;
    records.reserve(result.trace.layers.size());
    for (auto& layer : result.trace.layers) records.push_back(std::move(layer.attention_probability));
    return records;
}

EncoderWeights random_encoder(const EncoderConfig& config, std::uint64_t seed, double scale) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto gaussian = [&](Shape shape, double stddev, double mean = 0.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = mean + stddev * normal(rng);
        return t;
    };
    const std::size_t e = config.embed_dim, f = config.ffn_hidden;
    const double we = scale / std::sqrt(static_cast<double>(e));
    const double wf = scale / std::sqrt(static_cast<double>(f));

    EncoderWeights weights;
    weights.config = config;
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        LayerWeights lw;
        lw.wq = gaussian({e, e}, we);
        lw.bq = gaussian({e}, 0.02 * scale);
        lw.wk = gaussian({e, e}, we);
        lw.bk = gaussian({e}, 0.02 * scale);
        lw.wv = gaussian({e, e}, we);
        lw.bv = gaussian({e}, 0.02 * scale);
        lw.wo = gaussian({e, e}, we);
        lw.bo = gaussian({e}, 0.02 * scale);
        lw.w1 = gaussian({e, f}, we);
        lw.b1 = gaussian({f}, 0.02 * scale);
        lw.w2 = gaussian({f, e}, wf);
        lw.b2 = gaussian({e}, 0.02 * scale);
        lw.ln1_gamma = gaussian({e}, 0.05, 1.0);
        lw.ln1_beta = gaussian({e}, 0.05);
        lw.ln2_gamma = gaussian({e}, 0.05, 1.0);
        lw.ln2_beta = gaussian({e}, 0.05);
        weights.layers.push_back(std::move(lw));
    }
    if (config.num_classes > 0) {
        Classifier head;
        head.norm_gamma = gaussian({e}, 0.05, 1.0);
        head.norm_beta = gaussian({e}, 0.05);
        head.w = gaussian({e, config.num_classes}, we);
        head.b = gaussian({config.num_classes}, 0.02);
        weights.classifier = std::move(head);
    }
    return weights;
}

Tensor random_input(std::size_t seq_len, std::size_t embed_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor t({seq_len, embed_dim});
    for (auto& v : t.data()) v = normal(rng);
    return t;
}

}  // namespace cpvit
