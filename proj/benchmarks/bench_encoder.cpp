#include <benchmark/benchmark.h>

#include "hear/encoder.hpp"
#include "hear/rng.hpp"

namespace {

hear::Tensorf random_tokens(int n, int width) {
    hear::Tensorf t({n, width});
    hear::Rng rng(3, "bench_tokens");
    for (float& v : t.data) v = float(2.0 * rng.uniform() - 1.0);
    return t;
}

void BM_encode_chunk(benchmark::State& state) {
    hear::EncoderConfig cfg = hear::make_config("acoustic");
    cfg.input_width = 256;
    auto weights = hear::EncoderWeights<float>::random_init(cfg, 11, "bench");
    const auto tokens = random_tokens(static_cast<int>(state.range(0)), cfg.input_width);
    for (auto _ : state) {
        hear::Tape<float> tape;
        auto nodes = hear::stage_encoder(tape, weights, false);
        auto out = hear::encode(tape, nodes, tape.constant(tokens));
        benchmark::DoNotOptimize(tape.value(out).data.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_encode_chunk)->Arg(50)->Arg(150)->Arg(300);

void BM_encode_task_layer(benchmark::State& state) {
    hear::EncoderConfig cfg = hear::make_config("task");
    cfg.input_width = 512;
    auto weights = hear::EncoderWeights<float>::random_init(cfg, 12, "bench_task");
    const auto tokens = random_tokens(static_cast<int>(state.range(0)), cfg.input_width);
    for (auto _ : state) {
        hear::Tape<float> tape;
        auto nodes = hear::stage_encoder(tape, weights, false);
        auto out = hear::encode(tape, nodes, tape.constant(tokens));
        benchmark::DoNotOptimize(tape.value(out).data.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_encode_task_layer)->Arg(250)->Arg(500)->Arg(1000);

} // namespace
