#include <benchmark/benchmark.h>

#include "hear/downstream.hpp"
#include "hear/profiler.hpp"
#include "hear/rng.hpp"

namespace {

// full inference path at production dimensions; items/s vs audio
// seconds gives an RTF estimate under the benchmark harness
void BM_inference_full(benchmark::State& state) {
    hear::FrontendConfig fe;
    hear::EncoderConfig acoustic = hear::make_config("acoustic");
    acoustic.input_width = fe.patch_width();
    hear::EncoderConfig task = hear::make_config("task");
    auto weights = hear::DownstreamWeights<float>::random_init(
        acoustic, task, 128, fe.spectrum_bins(), 512, 50, hear::FineTuneMode::base, 17);

    hear::WorkloadSpec work;
    work.audio_seconds = double(state.range(0));
    work.frontend = fe;
    for (auto _ : state) {
        auto times = hear::time_inference_runs(weights, work, 1, 0);
        benchmark::DoNotOptimize(times.data());
    }
    state.counters["audio_s"] = double(state.range(0));
}
BENCHMARK(BM_inference_full)->Arg(6)->Arg(10)->Unit(benchmark::kMillisecond);

} // namespace
