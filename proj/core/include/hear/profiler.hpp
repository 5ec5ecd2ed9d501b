#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hear/downstream.hpp"
#include "hear/encoder.hpp"
#include "hear/frontend.hpp"
#include "hear/tokenizer.hpp"

namespace hear {

// Analytic per-category FLOPs for one encoder pass over n tokens, written
// from the architecture algebra. Must agree exactly with the instrumented
// tensor-op counter under the shared cost convention; the test suite holds
// the two routes together.
struct EncoderFlopSplit {
    int64_t embedding = 0;
    int64_t attention_linear = 0;
    int64_t attention_quadratic = 0;
    int64_t ffn = 0;

    int64_t total() const { return embedding + attention_linear + attention_quadratic + ffn; }
};

EncoderFlopSplit encoder_flops(const EncoderConfig& cfg, int n_tokens);

struct ProfileModelSpec {
    EncoderConfig acoustic;
    EncoderConfig task; // input_width as wired (acoustic hidden + d_p)
    int d_p = 128;
    int head_hidden = 512;
    int classes = 50;
    bool no_spectrum = false;
};

struct WorkloadSpec {
    double audio_seconds = 10.0;
    FrontendConfig frontend;
    int batch = 1; // RTF convention: batch of one

    void validate() const {
        if (audio_seconds <= 0) throw ConfigError("workload: duration must be positive");
        frontend.validate();
    }
};

struct FlopBreakdown {
    int64_t embedding = 0;
    int64_t attention_linear = 0;
    int64_t attention_quadratic = 0;
    int64_t ffn = 0;
    int64_t gating = 0;
    int64_t task = 0;
    int64_t head = 0;
    int64_t frontend = 0;

    int64_t acoustic_total() const {
        return embedding + attention_linear + attention_quadratic + ffn;
    }
    int64_t model_total() const { return acoustic_total() + gating + task + head; }
    int64_t total() const { return model_total() + frontend; }
    std::map<std::string, int64_t> as_map() const;
};

// Analytic cost of the full inference path (frontend -> chunked acoustic
// encode -> crossfade -> gating -> task -> pooled head with softmax).
// monolithic=true replaces the chunked layout by one full-length attention
// window - the O(N^2) comparator.
FlopBreakdown estimate_flops(const ProfileModelSpec& model, const WorkloadSpec& workload,
                             bool monolithic = false);

int64_t frontend_flops(const FrontendConfig& cfg, double audio_seconds);
int tokens_for_duration(const FrontendConfig& cfg, double audio_seconds);

// --- parameter audit (shape-only; values never matter) ---

template <class S>
int64_t count_params(EncoderWeights<S>& w) {
    return w.param_count();
}

template <class S>
int64_t count_params(GateWeights<S>& g) {
    int64_t n = 0;
    g.for_each([&](const std::string&, Tensor<S>& t) { n += t.size(); });
    return n;
}

template <class S>
int64_t count_params(HeadWeights<S>& h) {
    int64_t n = 0;
    h.for_each([&](const std::string&, Tensor<S>& t) { n += t.size(); });
    return n;
}

template <class S>
int64_t count_params(TokenizerWeights<S>& t) {
    return t.param_count();
}

template <class S>
std::map<std::string, int64_t> count_params(DownstreamWeights<S>& w) {
    std::map<std::string, int64_t> out;
    out["acoustic"] = count_params(w.acoustic);
    out["task"] = count_params(w.task) + count_params(w.gate); // gating projections audit with the task model
    out["head"] = count_params(w.head);
    out["total_inference"] = out["acoustic"] + out["task"] + out["head"];
    return out;
}

struct CostReport {
    std::map<std::string, int64_t> params;
    FlopBreakdown flops;
    double gflops = 0.0;
    double audio_seconds = 0.0;
    double rtf = -1.0; // unset when not measured
    std::vector<double> run_seconds;
    double reference_gflops = 9.47; // published figure, ARM single-thread conditions
    double reference_rtf = 0.095;
    std::string note;

    std::string to_json() const;
    std::string to_table() const;
};

// median(processing time)/duration over >=5 timed runs
double real_time_factor(std::vector<double> run_seconds, double audio_seconds);

// End-to-end single-thread inference timing on a deterministic noise input.
std::vector<double> time_inference_runs(DownstreamWeights<float>& weights,
                                        const WorkloadSpec& workload, int runs = 5,
                                        int warmup = 1, uint64_t seed = 7);

} // namespace hear
