#include <benchmark/benchmark.h>

#include <random>

#include "cpvit/encoder.hpp"
#include "cpvit/pruner.hpp"
#include "cpvit/scheduler.hpp"
#include "cpvit/scoring.hpp"

using namespace cpvit;

namespace {

EncoderConfig vit_like(std::size_t seq_len) {
    EncoderConfig cfg;
    cfg.num_layers = 6;
    cfg.num_heads = 4;
    cfg.seq_len = seq_len;
    cfg.head_dim = 16;
    cfg.embed_dim = 64;
    cfg.ffn_hidden = 256;
    cfg.num_classes = 10;
    return cfg;
}

Tensor softmax_attention(std::size_t heads, std::size_t len, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n;
    Tensor logits({heads, len, len});
    for (double& v : logits.data()) v = n(rng);
    return softmax_rows(logits);
}

void BM_DenseForward(benchmark::State& state) {
    const auto cfg = vit_like(static_cast<std::size_t>(state.range(0)));
    const auto w = random_encoder(cfg, 1);
    const auto x = random_input(cfg.seq_len, cfg.embed_dim, 2);
    for (auto _ : state) benchmark::DoNotOptimize(forward(w, x).logits);
}
BENCHMARK(BM_DenseForward)->Arg(65)->Arg(197);

void BM_CascadePruned(benchmark::State& state) {
    const auto cfg = vit_like(static_cast<std::size_t>(state.range(0)));
    const auto w = random_encoder(cfg, 1);
    const auto x = random_input(cfg.seq_len, cfg.embed_dim, 2);
    double saving = 0.0;
    for (auto _ : state) {
        const auto run = run_ablation(w, x, AblationMode::cp_vit, 0.5, 3);
        saving = run.flops.saving_percent();
        benchmark::DoNotOptimize(run.logits);
    }
    state.counters["flops_saving_pct"] = saving;
}
BENCHMARK(BM_CascadePruned)->Arg(65)->Arg(197);

void BM_FastScores(benchmark::State& state) {
    const auto len = static_cast<std::size_t>(state.range(0));
    const auto a = softmax_attention(4, len, 5);
    const auto patches = all_alive(len), heads = all_alive(4);
    for (auto _ : state) benchmark::DoNotOptimize(fast_scores(a, patches, heads));
}
BENCHMARK(BM_FastScores)->Arg(65)->Arg(197);

void BM_SumCriterion(benchmark::State& state) {
    const auto len = static_cast<std::size_t>(state.range(0));
    const auto a = softmax_attention(4, len, 5);
    std::vector<double> scores(len);
    for (auto _ : state) {
        for (std::size_t p = 0; p < len; ++p) scores[p] = oracle_layer_patch_informativeness(a, p);
        benchmark::DoNotOptimize(scores.data());
    }
}
BENCHMARK(BM_SumCriterion)->Arg(65)->Arg(197);

void BM_RangeEstimate(benchmark::State& state) {
    const auto a = softmax_attention(4, 197, 7);
    SchedulerParams p;
    p.k = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_attention_range(a, p, rng));
}
BENCHMARK(BM_RangeEstimate)->Arg(8)->Arg(32)->Arg(128);

void BM_RangeExhaustive(benchmark::State& state) {
    const auto a = softmax_attention(4, 197, 7);
    SchedulerParams p;
    p.sampling = OrdinateSampling::exhaustive;
    std::mt19937_64 rng(1);
    for (auto _ : state) benchmark::DoNotOptimize(estimate_attention_range(a, p, rng));
}
BENCHMARK(BM_RangeExhaustive);

}  // namespace

BENCHMARK_MAIN();
