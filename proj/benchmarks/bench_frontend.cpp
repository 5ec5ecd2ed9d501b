#include <benchmark/benchmark.h>

#include "hear/frontend.hpp"
#include "hear/rng.hpp"

namespace {

hear::Waveform noise_wave(double seconds) {
    hear::Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(static_cast<size_t>(seconds * w.sample_rate));
    hear::Rng rng(5, "bench_wave");
    for (double& s : w.samples) s = 0.3 * (2.0 * rng.uniform() - 1.0);
    return w;
}

void BM_logmel(benchmark::State& state) {
    const hear::FrontendConfig cfg;
    const auto wave = noise_wave(double(state.range(0)));
    for (auto _ : state) {
        auto mel = hear::compute_logmel(wave, cfg);
        benchmark::DoNotOptimize(mel.frames.data.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_logmel)->Arg(1)->Arg(6)->Arg(10);

void BM_full_frontend(benchmark::State& state) {
    const hear::FrontendConfig cfg;
    const auto wave = noise_wave(double(state.range(0)));
    for (auto _ : state) {
        auto out = hear::run_frontend(wave, cfg);
        benchmark::DoNotOptimize(out.patches.tokens.data.data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_full_frontend)->Arg(6)->Arg(10);

void BM_resample_44k_to_16k(benchmark::State& state) {
    hear::Waveform w = noise_wave(double(state.range(0)));
    w.sample_rate = 44100;
    w.samples.resize(static_cast<size_t>(state.range(0)) * 44100);
    for (auto _ : state) {
        auto out = hear::resample(w, 16000);
        benchmark::DoNotOptimize(out.samples.data());
    }
}
BENCHMARK(BM_resample_44k_to_16k)->Arg(1)->Arg(5);

} // namespace
