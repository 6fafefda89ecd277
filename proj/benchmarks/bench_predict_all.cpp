// Inference-cost benchmarks: all-item scoring should scale linearly in the
// vocabulary size and stay flat in the window length once the context vector
// is computed; encoding itself carries the length-dependent cost.

#include <benchmark/benchmark.h>

#include "saicl/data.hpp"
#include "saicl/encoder.hpp"
#include "saicl/rng.hpp"
#include "saicl/synth.hpp"

using namespace saicl;

namespace {

constexpr int kDim = 100;

ParamStore store_for_items(int n_items, const EncoderConfig& cfg) {
    FeatureSchema schema;
    schema.n_items = n_items;
    schema.has_correct = true;
    TaskKind task;
    return init_params(cfg, schema, task, HeadKind::SharedItem, 42);
}

EncoderConfig base_config(int seq_len) {
    EncoderConfig cfg;
    cfg.hidden_dim = kDim;
    cfg.seq_len = seq_len;
    cfg.dropout_rate = 0.0;
    return cfg;
}

void BM_PredictAllItems(benchmark::State& state) {
    const int n_items = static_cast<int>(state.range(0));
    const EncoderConfig cfg = base_config(100);
    const ParamStore store = store_for_items(n_items, cfg);
    Rng rng(1);
    Tensor h({kDim});
    for (int64_t i = 0; i < kDim; ++i) h[i] = rng.uniform(-1.0, 1.0);

    for (auto _ : state) {
        auto probs = predict_all_items(h, store, HeadKind::SharedItem, n_items);
        benchmark::DoNotOptimize(probs.data());
    }
    state.SetItemsProcessed(state.iterations() * n_items);
}

void BM_PredictAllItemsVsWindow(benchmark::State& state) {
    // scoring from a fixed context vector; the window-length cost was paid
    // at encode time and must not appear here
    const int seq_len = static_cast<int>(state.range(0));
    const EncoderConfig cfg = base_config(seq_len);
    const ParamStore store = store_for_items(2000, cfg);
    Rng rng(2);
    Tensor h({kDim});
    for (int64_t i = 0; i < kDim; ++i) h[i] = rng.uniform(-1.0, 1.0);

    for (auto _ : state) {
        auto probs = predict_all_items(h, store, HeadKind::SharedItem, 2000);
        benchmark::DoNotOptimize(probs.data());
    }
}

void BM_EncodeWindow(benchmark::State& state) {
    const int seq_len = static_cast<int>(state.range(0));
    const EncoderConfig cfg = base_config(seq_len);
    FeatureSchema schema;
    schema.n_items = 2000;
    schema.has_correct = true;
    TaskKind task;
    ParamStore store = init_params(cfg, schema, task, HeadKind::SharedItem, 43);

    SynthConfig synth;
    synth.n_students = 8;
    synth.n_items = 2000;
    synth.min_len = seq_len;
    synth.max_len = seq_len;
    synth.seed = 3;
    const auto seqs = generate_kt(synth);
    const SequenceBatch batch = build_batch(seqs, seq_len, task, schema, 4);

    for (auto _ : state) {
        GraphParams gp(store, false);
        Rng noise(0);
        const EncodeOut enc = encode_batch(batch, cfg, schema, gp, false, noise);
        benchmark::DoNotOptimize(enc.H->value.data());
    }
    state.SetItemsProcessed(state.iterations() * batch.B * seq_len);
}

} // namespace

BENCHMARK(BM_PredictAllItems)->RangeMultiplier(2)->Range(1000, 16000);
BENCHMARK(BM_PredictAllItemsVsWindow)->Arg(8)->Arg(32)->Arg(128);
BENCHMARK(BM_EncodeWindow)->Arg(25)->Arg(50)->Arg(100);

BENCHMARK_MAIN();
