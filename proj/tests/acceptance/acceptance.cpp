// Acceptance suite: one PASS/FAIL line per criterion. Run a single criterion
// with `--criterion <name>`; without arguments every criterion runs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cpvit/archive.hpp"
#include "cpvit/error.hpp"
#include "cpvit/flops.hpp"
#include "cpvit/pruner.hpp"
#include "cpvit/scheduler.hpp"
#include "cpvit/scoring.hpp"
#include "oracles.hpp"

using namespace cpvit;

namespace {

enum class Status { pass, fail, warn };

struct Outcome {
    Status status = Status::pass;
    std::string detail;
};

// Collects violations; the first few are kept for the report line.
class Violations {
public:
    void add(const std::string& what) {
        if (count_++ < 3) first_.push_back(what);
    }
    std::size_t count() const { return count_; }
    std::string summary() const {
        std::string s;
        for (const auto& f : first_) s += (s.empty() ? "" : "; ") + f;
        return s;
    }

private:
    std::size_t count_ = 0;
    std::vector<std::string> first_;
};

std::string fmt(const char* pattern, double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), pattern, v);
    return buffer;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

EncoderConfig make_config(std::size_t layers, std::size_t heads, std::size_t seq, std::size_t head_dim,
                          std::size_t ffn, std::size_t classes) {
    EncoderConfig cfg;
    cfg.num_layers = layers;
    cfg.num_heads = heads;
    cfg.seq_len = seq;
    cfg.head_dim = head_dim;
    cfg.embed_dim = heads * head_dim;
    cfg.ffn_hidden = ffn;
    cfg.num_classes = classes;
    return cfg;
}

constexpr AblationMode all_modes[] = {AblationMode::cp_vit, AblationMode::prediction_only, AblationMode::pure_random};

Outcome dense_equivalence() {
    const auto start = std::chrono::steady_clock::now();
    constexpr double tol = 1e-12;
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    Violations v;
    for (int m = 0; m < 20; ++m) {
        const auto cfg = make_config(1 + rng() % 4, 1 + rng() % 4, 2 + rng() % 15, 1 + rng() % 6, 4 + rng() % 16,
                                     1 + rng() % 5);
        const auto w = random_encoder(cfg, rng());
        const auto x = random_input(cfg.seq_len, cfg.embed_dim, rng());
        const auto dense = forward(w, x).logits;
        for (AblationMode mode : all_modes) {
            const auto run = run_ablation(w, x, mode, 0.0, rng());
            const double d = max_abs_diff(run.logits, dense);
            worst = std::max(worst, d);
            if (d > tol) v.add("model " + std::to_string(m) + " " + to_string(mode) + " diff " + fmt("%.3g", d));
            if (run.flops.saving_percent() != 0.0) v.add("model " + std::to_string(m) + " reports nonzero saving");
        }
    }
    const double elapsed = seconds_since(start);
    if (elapsed >= 5.0) v.add("runtime " + fmt("%.2f", elapsed) + " s");
    return {v.count() ? Status::fail : Status::pass,
            "20 models x 3 modes, max |diff| " + fmt("%.3g", worst) + " (tol 1e-12), " + fmt("%.3f", elapsed) +
                " s (limit 5 s)" + (v.count() ? ": " + v.summary() : "")};
}

Outcome oracle_agreement() {
    constexpr double tol = 1e-12;
    double worst = 0.0;
    Violations v;
    auto check = [&](double got, double want, const std::string& what) {
        const double d = std::abs(got - want);
        worst = std::max(worst, d);
        if (!(d <= tol)) v.add(what + " diff " + fmt("%.3g", d));
    };
    for (std::uint64_t t = 0; t < 100; ++t) {
        const std::size_t H = 1 + t % 4, L = 3 + t % 14;
        const auto a = oracle::random_attention(H, L, 1000 + t, 0.5 + 0.05 * static_cast<double>(t % 40));
        const double alpha = 0.25 + 0.01 * static_cast<double>(t), beta = 1.5 - 0.01 * static_cast<double>(t);
        for (std::size_t p = 0; p < L; ++p) {
            for (std::size_t h = 0; h < H; ++h) {
                check(oracle_patch_informativeness(a, p, h, alpha, beta),
                      oracle::naive_patch_informativeness(a, p, h, alpha, beta), "patch informativeness");
            }
            check(oracle_layer_patch_informativeness(a, p, alpha, beta),
                  oracle::naive_layer_patch_informativeness(a, p, alpha, beta), "layer informativeness");
        }
        for (std::size_t h = 0; h < H; ++h) {
            check(oracle_head_informativeness(a, h), oracle::naive_head_informativeness(a, h), "head informativeness");
        }

        std::mt19937_64 rng(t);
        BinaryMask patches = all_alive(L), heads = all_alive(H);
        for (std::size_t p = 1; p < L; ++p) patches[p] = rng() % 4 != 0;
        if (H > 1) heads[rng() % H] = 0;
        const auto fast = fast_scores(a, patches, heads);
        const auto ref = oracle::naive_column_max_deltas(a, patches, heads);
        for (std::size_t p = 0; p < L; ++p) check(fast.patch[p], ref.patch[p], "max-criterion patch score");
        for (std::size_t h = 0; h < H; ++h) check(fast.head[h], ref.head[h], "max-criterion head score");
    }

    std::size_t agree = 0;
    for (std::uint64_t t = 0; t < 100; ++t) {
        const std::size_t H = 1 + t % 4, L = 4 + t % 13, c = 1 + t % (L - 1);
        const auto a = oracle::dominant_column_attention(H, L, c, 5000 + t);
        std::vector<double> sums(L);
        for (std::size_t p = 0; p < L; ++p) sums[p] = oracle::naive_layer_patch_informativeness(a, p, 1.0, 1.0);
        const auto fast = fast_scores(a, all_alive(L), all_alive(H)).patch;
        if (argmax(sums) == c && argmax(fast) == c) ++agree;
    }
    if (agree != 100) v.add("dominance agreement " + std::to_string(agree) + "/100");
    return {v.count() ? Status::fail : Status::pass,
            "100 tensors, max |diff| " + fmt("%.3g", worst) + " (tol 1e-12); dominance " + std::to_string(agree) +
                "/100" + (v.count() ? ": " + v.summary() : "")};
}

Outcome cascade_laws() {
    Violations v;
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        std::mt19937_64 rng(seed);
        const auto cfg = make_config(2 + rng() % 4, 1 + rng() % 4, 4 + rng() % 13, 1 + rng() % 4, 8, 3);
        const auto w = random_encoder(cfg, seed);
        const auto x = random_input(cfg.seq_len, cfg.embed_dim, seed + 7);
        const double ratio = 0.1 + 0.85 * static_cast<double>(rng() % 1000) / 1000.0;
        for (AblationMode mode : all_modes) {
            const auto run = run_ablation(w, x, mode, ratio, seed);
            const std::string tag = "seed " + std::to_string(seed) + " " + to_string(mode);
            const auto& layers = run.trace.layers;
            for (std::size_t l = 0; l < layers.size(); ++l) {
                const auto& rec = layers[l];
                ++checked;
                const std::size_t pruned_p = cfg.seq_len - rec.mask.alive_patches();
                const std::size_t pruned_h = cfg.num_heads - rec.mask.alive_heads();
                const auto want_p = std::min<std::size_t>(
                    static_cast<std::size_t>(std::floor(rec.patch_ratio * static_cast<double>(cfg.seq_len) + 1e-9)),
                    cfg.seq_len - 2);
                const auto want_h = std::min<std::size_t>(
                    static_cast<std::size_t>(std::floor(rec.head_ratio * static_cast<double>(cfg.num_heads) + 1e-9)),
                    cfg.num_heads - 1);
                if (pruned_p != want_p) v.add(tag + " layer " + std::to_string(l) + " patch count");
                if (pruned_h != want_h) v.add(tag + " layer " + std::to_string(l) + " head count");
                if (rec.mask.patch_mask[0] != 1) v.add(tag + " CLS pruned");
                if (l == 0) continue;
                const auto& prev = layers[l - 1];
                if (!is_subset(rec.mask.patch_mask, prev.mask.patch_mask) ||
                    !is_subset(rec.mask.head_mask, prev.mask.head_mask)) {
                    v.add(tag + " layer " + std::to_string(l) + " mask grew");
                }
                for (std::size_t p = 0; p < cfg.seq_len; ++p) {
                    if (!prev.mask.patch_mask[p] && rec.scores.patch[p] != prev.scores.patch[p]) {
                        v.add(tag + " frozen patch " + std::to_string(p) + " changed");
                    }
                }
                for (std::size_t h = 0; h < cfg.num_heads; ++h) {
                    if (!prev.mask.head_mask[h] && rec.scores.head[h] != prev.scores.head[h]) {
                        v.add(tag + " frozen head " + std::to_string(h) + " changed");
                    }
                }
            }
        }
    }
    return {v.count() ? Status::fail : Status::pass,
            "200 seeds x 3 modes, " + std::to_string(checked) + " layer records, " + std::to_string(v.count()) +
                " violations" + (v.count() ? ": " + v.summary() : "")};
}

Outcome scheduler_analytics() {
    Violations v;
    SchedulerParams p;
    p.eta = 1.0;
    for (std::size_t L : {5u, 12u, 17u}) {
        std::mt19937_64 rng(L);
        const auto r = estimate_attention_range(oracle::identity_attention(3, L), p, rng);
        if (r.attention_range != 0.0) v.add("identity L=" + std::to_string(L) + " gives " + fmt("%.17g", r.attention_range));
    }
    p.eta = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        std::mt19937_64 rng(s);
        const auto r = estimate_attention_range(oracle::random_attention(2, 9, s), p, rng);
        if (r.attention_range != 1.0) v.add("eta=0 gives " + fmt("%.17g", r.attention_range));
    }

    SchedulerParams ex;
    ex.sampling = OrdinateSampling::exhaustive;
    std::size_t exact = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const std::size_t H = 1 + s % 4, L = 3 + s % 14;
        ex.delta = s % 4;
        const auto a = oracle::random_attention(H, L, 300 + s, 3.0);
        std::mt19937_64 rng(s), prng(s + 1);
        BinaryMask patches = all_alive(L), heads = all_alive(H);
        for (std::size_t q = 1; q < L; ++q) patches[q] = prng() % 3 != 0;
        if (H > 1) heads[prng() % H] = 0;
        const auto r = estimate_attention_range(a, ex, rng, patches, heads);
        const auto ref = oracle::brute_force_short_range(a, ex.delta, patches, heads, true);
        if (r.short_range_count == ref.hits && r.votes == ref.votes) {
            ++exact;
        } else {
            v.add("exhaustive mismatch seed " + std::to_string(s));
        }
    }

    const auto a = oracle::random_attention(4, 17, 99, 2.5);
    const auto ref = oracle::brute_force_short_range(a, 2, all_alive(17), all_alive(4), true);
    const double mean_f = static_cast<double>(ref.hits) / static_cast<double>(ref.votes);
    double var_f = 0.0;
    for (double f : ref.per_row_fraction) var_f += (f - mean_f) * (f - mean_f);
    var_f /= static_cast<double>(ref.per_row_fraction.size());
    SchedulerParams sp;
    sp.k = 8;
    constexpr int trials = 1000;
    double total = 0.0;
    for (int t = 0; t < trials; ++t) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(t));
        const auto r = estimate_attention_range(a, sp, rng);
        total += static_cast<double>(r.short_range_count) / static_cast<double>(r.votes);
    }
    const double sigma = std::sqrt(var_f / (static_cast<double>(sp.k) * trials));
    const double z = std::abs(total / trials - mean_f) / sigma;
    if (!(z <= 3.0)) v.add("sampled mean off by " + fmt("%.2f", z) + " sigma");
    return {v.count() ? Status::fail : Status::pass,
            "identity range 0, eta=0 range 1, exhaustive " + std::to_string(exact) + "/100 exact, sampled mean " +
                fmt("%.2f", z) + " sigma from exhaustive over 1000 trials (limit 3)" +
                (v.count() ? ": " + v.summary() : "")};
}

CascadeMask leading(const EncoderConfig& cfg, std::size_t patches, std::size_t heads, std::size_t layer) {
    CascadeMask m;
    m.patch_mask.assign(cfg.seq_len, 0);
    m.head_mask.assign(cfg.num_heads, 0);
    std::fill_n(m.patch_mask.begin(), patches, 1);
    std::fill_n(m.head_mask.begin(), heads, 1);
    m.layer_index = layer;
    return m;
}

Outcome flops_exactness() {
    Violations v;
    std::size_t points = 0;
    for (const auto& cfg : {make_config(1, 4, 16, 4, 24, 0), make_config(1, 3, 16, 5, 11, 0),
                            make_config(1, 2, 16, 8, 32, 0)}) {
        const auto w = random_encoder(cfg, 17);
        const auto x = random_input(cfg.seq_len, cfg.embed_dim, 18);
        for (std::size_t l = 1; l <= 16; ++l) {
            for (std::size_t h = 1; h <= 4; ++h) {
                if (h > cfg.num_heads) continue;
                ++points;
                const std::vector<CascadeMask> masks{leading(cfg, l, h, 0)};
                const auto f = layer_flops(cfg, l, h);
                const auto result = forward(w, x, masks);
                if (f.total() != 2 * result.trace.layers[0].macs) {
                    v.add("L'=" + std::to_string(l) + " H'=" + std::to_string(h) + " formula " +
                          std::to_string(f.total()) + " counter " + std::to_string(2 * result.trace.layers[0].macs));
                }
                if (f.total() != 2 * oracle::enumerate_block_macs(cfg, l, h)) v.add("enumeration mismatch");
            }
        }
    }

    // uniform 50% patch mask on every layer, all heads
    const auto cfg = make_config(4, 4, 16, 8, 128, 0);
    std::vector<CascadeMask> half;
    for (std::size_t l = 0; l < 4; ++l) half.push_back(leading(cfg, 8, 4, l));
    const auto report = flops_report(half, cfg);
    const std::uint64_t L = 16, E = 32, H = 4, D = 8, F = 128, layers = 4;
    const auto block = [&](std::uint64_t n) {
        return 2 * n * E * 3 * H * D + 4 * H * n * n * D + 2 * n * H * D * E + 4 * n * E * F;
    };
    if (report.dense_total().total() != layers * block(L)) v.add("dense total");
    if (report.pruned_total().total() != layers * block(L / 2)) v.add("pruned total");
    const double expected = 100.0 * (1.0 - static_cast<double>(block(L / 2)) / static_cast<double>(block(L)));
    if (std::abs(report.saving_percent() - expected) > 1e-12) v.add("saving percent");
    return {v.count() ? Status::fail : Status::pass,
            std::to_string(points) + " (L', H') points on 3 configs equal to the counter; 50% mask report " +
                fmt("%.4f", report.saving_percent()) + "% = closed form " + fmt("%.4f", expected) + "%" +
                (v.count() ? ": " + v.summary() : "")};
}

Outcome flops_trend() {
    const auto start = std::chrono::steady_clock::now();
    // ViT-shaped toy: 64 patches + CLS, E = 64, 4 heads, FFN 4E, 12 layers
    const auto cfg = make_config(12, 4, 65, 16, 256, 10);
    const auto w = random_encoder(cfg, 12);
    constexpr int samples = 4;
    double saving = 0.0, terminal = 0.0;
    for (int i = 0; i < samples; ++i) {
        const auto run = run_ablation(w, random_input(cfg.seq_len, cfg.embed_dim, 100 + i), AblationMode::cp_vit, 0.5,
                                      static_cast<std::uint64_t>(i));
        saving += run.flops.saving_percent();
        terminal += static_cast<double>(run.trace.layers.back().pruned_patches) / static_cast<double>(cfg.seq_len);
    }
    saving /= samples;
    terminal /= samples;
    const double elapsed = seconds_since(start);
    const bool ok = saving >= 35.0 && saving <= 55.0 && elapsed < 10.0;
    return {ok ? Status::pass : Status::fail,
            "12 layers, L=65, E=64, H=4, cp_vit target 0.5: mean saving " + fmt("%.2f", saving) +
                "% (band 35-55%), mean terminal patch ratio " + fmt("%.3f", terminal) + ", " + fmt("%.2f", elapsed) +
                " s (limit 10 s)"};
}

Outcome ablation_ordering() {
    const auto w = load_encoder(CPVIT_DATA_DIR "/toy_cluster.cpvt");
    const auto bundle = load_inputs(CPVIT_DATA_DIR "/toy_cluster_inputs.cpvt");
    std::vector<Tensor> dense;
    for (const auto& x : bundle.inputs) dense.push_back(forward(w, x).logits);
    double top1[3] = {};
    double drift[3] = {};
    for (AblationMode mode : all_modes) {
        std::vector<Tensor> logits;
        for (std::size_t i = 0; i < bundle.inputs.size(); ++i) {
            logits.push_back(run_ablation(w, bundle.inputs[i], mode, 0.5, i).logits);
        }
        const auto m = compare_logits(dense, logits);
        top1[static_cast<int>(mode)] = m.top1_agreement;
        drift[static_cast<int>(mode)] = m.mean_l2_drift;
    }
    const double cp = top1[static_cast<int>(AblationMode::cp_vit)];
    const double pred = top1[static_cast<int>(AblationMode::prediction_only)];
    const double rnd = top1[static_cast<int>(AblationMode::pure_random)];
    const bool ok = cp >= pred && pred >= rnd;
    return {ok ? Status::pass : Status::warn,
            std::to_string(bundle.inputs.size()) + " toy inputs at ratio 0.5, top-1 cp_vit " + fmt("%.4f", cp) +
                " prediction_only " + fmt("%.4f", pred) + " pure_random " + fmt("%.4f", rnd) + "; L2 drift " +
                fmt("%.3f", drift[static_cast<int>(AblationMode::cp_vit)]) + " / " +
                fmt("%.3f", drift[static_cast<int>(AblationMode::prediction_only)]) + " / " +
                fmt("%.3f", drift[static_cast<int>(AblationMode::pure_random)]) + (ok ? "" : " (ordering violated)")};
}

std::vector<std::byte> mutate(const std::vector<std::byte>& good, std::mt19937_64& rng, int kind) {
    auto bytes = good;
    const std::size_t header = std::min<std::size_t>(bytes.size(), 1024);
    switch (kind) {
        case 0:  // truncation
            bytes.resize(rng() % bytes.size());
            break;
        case 1:  // bit flips in the header
            for (int i = 0; i < 1 + static_cast<int>(rng() % 4); ++i) {
                bytes[rng() % header] ^= std::byte{static_cast<unsigned char>(1u << (rng() % 8))};
            }
            break;
        case 2: {  // random 8-byte word in the header, e.g. a dim or offset
            const std::size_t at = rng() % (header - 8);
            const std::uint64_t word = rng() >> (rng() % 64);
            std::memcpy(bytes.data() + at, &word, 8);
            break;
        }
        case 3:  // random bytes anywhere, payload included
            for (int i = 0; i < 8; ++i) bytes[rng() % bytes.size()] = std::byte{static_cast<unsigned char>(rng())};
            break;
        default:  // trailing garbage or a chunk deleted from the middle
            if (rng() % 2) {
                bytes.insert(bytes.end(), 1 + rng() % 16, std::byte{0x5a});
            } else {
                const std::size_t at = rng() % bytes.size();
                bytes.erase(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                            bytes.begin() + static_cast<std::ptrdiff_t>(std::min(bytes.size(), at + 1 + rng() % 32)));
            }
    }
    return bytes;
}

Outcome robustness() {
    const auto cfg = load_encoder(CPVIT_DATA_DIR "/toy_cluster.json").config;
    const auto good = encode_archive(load_archive(CPVIT_DATA_DIR "/toy_cluster.cpvt"));
    std::mt19937_64 rng(31337);
    std::size_t archive_errors = 0, model_errors = 0, loaded = 0;
    Violations v;
    for (int i = 0; i < 200; ++i) {
        const auto bytes = mutate(good, rng, i % 5);
        try {
            const auto w = encoder_from_archive(cfg, decode_archive(bytes));
            forward(w, random_input(cfg.seq_len, cfg.embed_dim, 1));
            ++loaded;
        } catch (const ArchiveError&) {
            ++archive_errors;
        } catch (const ModelError&) {
            ++model_errors;
        } catch (const std::exception& e) {
            v.add("mutant " + std::to_string(i) + ": untyped " + e.what());
        }
    }
    return {v.count() ? Status::fail : Status::pass,
            "200 mutants: " + std::to_string(archive_errors) + " archive errors, " + std::to_string(model_errors) +
                " model errors, " + std::to_string(loaded) + " loaded (payload-only changes), " +
                std::to_string(v.count()) + " untyped" + (v.count() ? ": " + v.summary() : "")};
}

struct Criterion {
    const char* name;
    std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> list{
        {"dense_equivalence", dense_equivalence}, {"oracle_agreement", oracle_agreement},
        {"cascade_laws", cascade_laws},           {"scheduler_analytics", scheduler_analytics},
        {"flops_exactness", flops_exactness},     {"flops_trend", flops_trend},
        {"ablation_ordering", ablation_ordering}, {"robustness", robustness},
    };
    return list;
}

}  // namespace

int main(int argc, char** argv) {
    std::string only;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--criterion" && i + 1 < argc) {
            only = argv[++i];
        } else if (arg == "--list") {
            for (const auto& c : criteria()) std::printf("%s\n", c.name);
            return 0;
        } else {
            std::fprintf(stderr, "usage: cpvit_acceptance [--criterion NAME] [--list]\n");
            return 2;
        }
    }

    bool matched = false;
    bool failed = false;
    for (const auto& c : criteria()) {
        if (!only.empty() && only != c.name) continue;
        matched = true;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {Status::fail, std::string("threw: ") + e.what()};
        }
        const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::warn ? "WARN" : "FAIL";
        std::printf("%s %s: %s\n", tag, c.name, o.detail.c_str());
        std::fflush(stdout);
        failed = failed || o.status == Status::fail;
    }
    if (!matched) {
        std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
        return 2;
    }
    return failed ? 1 : 0;
}
