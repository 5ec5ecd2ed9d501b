#include "hear/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hear/flops_meter.hpp"
#include "hear/rng.hpp"

namespace hear {

using json = nlohmann::json;

EncoderFlopSplit encoder_flops(const EncoderConfig& cfg, int n_tokens) {
    cfg.validate();
    const int64_t n = n_tokens, d = cfg.hidden, f = cfg.intermediate, h = cfg.heads,
                  L = cfg.layers, w_in = cfg.input_width;
    EncoderFlopSplit s;
    s.embedding = 2 * n * w_in * d + n * d;
    s.attention_linear = L * (8 * n * d * d + 12 * n * d);
    s.attention_quadratic = L * (4 * n * n * d + 7 * h * n * n);
    s.ffn = L * (4 * n * d * f + 15 * n * f + 10 * n * d) + 8 * n * d; // incl. final norm
    return s;
}

int tokens_for_duration(const FrontendConfig& cfg, double audio_seconds) {
    cfg.validate();
    const int64_t samples = static_cast<int64_t>(std::llround(audio_seconds * cfg.sample_rate));
    const int hop = cfg.hop_samples();
    const int64_t frames = (samples + hop - 1) / hop;
    return static_cast<int>(frames / 2);
}

int64_t frontend_flops(const FrontendConfig& cfg, double audio_seconds) {
    cfg.validate();
    const int64_t samples = static_cast<int64_t>(std::llround(audio_seconds * cfg.sample_rate));
    const int hop = cfg.hop_samples();
    const int64_t frames = (samples + hop - 1) / hop;
    const int64_t tokens = frames / 2;
    const int64_t bins = cfg.spectrum_bins();
    const int64_t nm = cfg.n_mels;
    const int64_t win = cfg.window_samples();
    const int64_t fft = 5LL * cfg.n_fft * static_cast<int64_t>(std::log2(cfg.n_fft));
    const int64_t stft = frames * (win + fft + 3 * bins);
    // log-mel branch + z-normed log-power branch (normalization, log, pooling)
    return 2 * stft + (2 * frames * nm * bins + 2 * frames * nm) + 5 * frames * nm +
           2 * frames * bins + 5 * frames * bins + 2 * tokens * bins;
}

FlopBreakdown estimate_flops(const ProfileModelSpec& model, const WorkloadSpec& workload,
                             bool monolithic) {
    workload.validate();
    model.acoustic.validate();
    model.task.validate();
    const FrontendConfig& fe = workload.frontend;
    const int n_tokens = tokens_for_duration(fe, workload.audio_seconds);
    if (n_tokens < 1) throw DataError("estimate_flops: audio too short for one token");

    FlopBreakdown out;
    ChunkLayout layout;
    if (monolithic) {
        layout.mode = ChunkMode::inference;
        layout.windows.push_back({0, n_tokens});
        layout.chunk_tokens = n_tokens;
        layout.overlap_tokens = 0;
    } else {
        layout = layout_chunks(n_tokens, ChunkMode::inference, fe);
    }

    for (const auto& w : layout.windows) {
        const EncoderFlopSplit s = encoder_flops(model.acoustic, w.length());
        out.embedding += s.embedding;
        out.attention_linear += s.attention_linear;
        out.attention_quadratic += s.attention_quadratic;
        out.ffn += s.ffn;
    }

    // crossfade blends: 3 flops per element over each overlap + weight ramp
    const int64_t d = model.acoustic.hidden;
    for (size_t c = 0; c + 1 < layout.windows.size(); ++c) {
        const int64_t ov = layout.windows[c].end - layout.windows[c + 1].begin;
        out.gating += flops_cost::kCrossfade * ov * d + flops_cost::kCrossfadeWeight * ov;
    }

    const int64_t T = n_tokens;
    if (!model.no_spectrum) {
        const int64_t bins = fe.spectrum_bins();
        const int64_t dp = model.d_p;
        out.gating += 2 * T * dp * (bins + d) + 7 * T * dp;
    }

    out.task = encoder_flops(model.task, static_cast<int>(T)).total();

    const int64_t dt = model.task.hidden;
    const int64_t hh = model.head_hidden;
    const int64_t C = model.classes;
    out.head = 6 * T * dt                       // mean/std/max pooling
               + 2 * 3 * dt * hh + hh           // hidden projection
               + flops_cost::kGelu * hh         // activation
               + 2 * hh * C + C                 // class logits
               + flops_cost::kSoftmax * C;      // output probabilities
    out.frontend = frontend_flops(fe, workload.audio_seconds);
    return out;
}

std::map<std::string, int64_t> FlopBreakdown::as_map() const {
    return {{"embedding", embedding},
            {"attention_linear", attention_linear},
            {"attention_quadratic", attention_quadratic},
            {"ffn", ffn},
            {"gating", gating},
            {"task", task},
            {"head", head},
            {"frontend", frontend},
            {"total", total()}};
}

double real_time_factor(std::vector<double> run_seconds, double audio_seconds) {
    if (run_seconds.size() < 5)
        throw ConfigError("real_time_factor: need at least 5 timed runs");
    if (audio_seconds <= 0) throw ConfigError("real_time_factor: duration must be positive");
    std::sort(run_seconds.begin(), run_seconds.end());
    const size_t n = run_seconds.size();
    const double median =
        n % 2 ? run_seconds[n / 2] : 0.5 * (run_seconds[n / 2 - 1] + run_seconds[n / 2]);
    return median / audio_seconds;
}

std::string CostReport::to_json() const {
    json j;
    j["params"] = params;
    j["flops"] = flops.as_map();
    j["gflops"] = gflops;
    j["audio_seconds"] = audio_seconds;
    if (rtf >= 0) {
        j["rtf"] = rtf;
        j["run_seconds"] = run_seconds;
    }
    j["reference"] = {{"reference_gflops", reference_gflops},
                      {"reference_rtf", reference_rtf},
                      {"gflops_ratio", gflops / reference_gflops}};
    j["convention"] =
        "1 multiply-add = 2 FLOPs; per-element costs: softmax 5, layernorm 8, gelu 14, "
        "sigmoid 4, pooling mean/std/max 1/4/1, crossfade 3 (+8 per ramp weight); "
        "frontend counts both STFT branches at 5*n*log2(n) per FFT";
    if (!note.empty()) j["note"] = note;
    return j.dump(2);
}

std::string CostReport::to_table() const {
    std::ostringstream os;
    os << "cost report (" << audio_seconds << " s audio)\n";
    os << "  params:\n";
    for (const auto& [k, v] : params) os << "    " << k << ": " << v << "\n";
    os << "  flops:\n";
    for (const auto& [k, v] : flops.as_map()) os << "    " << k << ": " << v << "\n";
    os << "  gflops: " << gflops << " (reference " << reference_gflops
       << ", ratio " << gflops / reference_gflops << ")\n";
    if (rtf >= 0) os << "  rtf: " << rtf << " (reference " << reference_rtf << ", ARM)\n";
    if (!note.empty()) os << "  note: " << note << "\n";
    return os.str();
}

std::vector<double> time_inference_runs(DownstreamWeights<float>& weights,
                                        const WorkloadSpec& workload, int runs, int warmup,
                                        uint64_t seed) {
    workload.validate();
    Rng rng(seed, "rtf_input");
    Waveform wave;
    wave.sample_rate = workload.frontend.sample_rate;
    wave.samples.resize(static_cast<size_t>(workload.audio_seconds * wave.sample_rate));
    for (double& s : wave.samples) s = 0.25 * (2.0 * rng.uniform() - 1.0);

    auto run_once = [&]() {
        const FrontendOutput fo = run_frontend(wave, workload.frontend);
        Tape<float> tape;
        auto nodes = stage_downstream(tape, weights, false);
        auto logits = downstream_logits(tape, nodes, tape.constant(fo.patches.tokens.cast<float>()),
                                        tape.constant(fo.spectrum.values.cast<float>()),
                                        workload.frontend);
        (void)tape.softmax_rows(logits);
    };

    for (int i = 0; i < warmup; ++i) run_once();
    std::vector<double> times;
    times.reserve(static_cast<size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        run_once();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return times;
}

} // namespace hear
