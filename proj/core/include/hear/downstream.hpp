#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hear/encoder.hpp"
#include "hear/frontend.hpp"
#include "hear/tape.hpp"

namespace hear {

enum class FineTuneMode { base, scratch, no_spectrum, transfer };

inline const char* to_string(FineTuneMode m) {
    switch (m) {
        case FineTuneMode::base: return "base";
        case FineTuneMode::scratch: return "scratch";
        case FineTuneMode::no_spectrum: return "no_spectrum";
        case FineTuneMode::transfer: return "transfer";
    }
    return "?";
}

inline FineTuneMode finetune_mode_from(const std::string& s) {
    if (s == "base") return FineTuneMode::base;
    if (s == "scratch") return FineTuneMode::scratch;
    if (s == "no_spectrum") return FineTuneMode::no_spectrum;
    if (s == "transfer") return FineTuneMode::transfer;
    throw ConfigError("unknown fine-tune mode '" + s + "'");
}

// Cosine fade-in weights sampled at token centers: w(u) = (1 - cos(pi u))/2,
// u = (t + 0.5)/L. Fade-out is 1 - w, a partition of unity by construction.
inline std::vector<double> crossfade_weights(int overlap_len) {
    std::vector<double> w(static_cast<size_t>(overlap_len));
    for (int t = 0; t < overlap_len; ++t) {
        const double u = (t + 0.5) / overlap_len;
        w[static_cast<size_t>(t)] = 0.5 * (1.0 - std::cos(3.141592653589793 * u));
    }
    return w;
}

// Merge per-chunk feature sequences along an inference layout into one
// continuous sequence. Within each overlap the blend is
// prev + w*(next - prev), which is bit-exact passthrough when the chunks
// agree, and equals w*next + (1-w)*prev.
template <class S>
typename Tape<S>::Id crossfade_merge(Tape<S>& tape,
                                     const std::vector<typename Tape<S>::Id>& chunk_features,
                                     const ChunkLayout& layout) {
    if (layout.mode != ChunkMode::inference)
        throw NumericError("crossfade_merge: layout must be an inference layout");
    if (chunk_features.size() != layout.windows.size())
        throw NumericError("crossfade_merge: feature/window count mismatch");
    for (size_t c = 0; c < chunk_features.size(); ++c)
        if (tape.value(chunk_features[c]).rows() != layout.windows[c].length())
            throw NumericError("crossfade_merge: chunk " + std::to_string(c) +
                               " feature length does not match its window");
    if (chunk_features.size() == 1) return chunk_features[0];

    std::vector<typename Tape<S>::Id> parts;
    int pos = 0; // next global token to emit
    for (size_t c = 0; c < chunk_features.size(); ++c) {
        const auto w = layout.windows[c];
        const auto fc = chunk_features[c];
        const bool has_next = c + 1 < chunk_features.size();
        const int overlap_begin = has_next ? layout.windows[c + 1].begin : w.end;
        if (has_next && overlap_begin >= w.end)
            throw NumericError("crossfade_merge: adjacent windows do not overlap");
        if (overlap_begin > pos) parts.push_back(tape.slice_rows(fc, pos - w.begin, overlap_begin - w.begin));
        if (has_next) {
            const int len = w.end - overlap_begin;
            auto prev_tail = tape.slice_rows(fc, overlap_begin - w.begin, w.end - w.begin);
            auto next_head = tape.slice_rows(chunk_features[c + 1], 0, len);
            const auto wd = crossfade_weights(len);
            Tensor<S> wv({len});
            for (int i = 0; i < len; ++i) wv[i] = S(wd[static_cast<size_t>(i)]);
            charge_flops(flops_cost::kCrossfadeWeight * len);
            auto blend = tape.add(prev_tail, tape.mul_colvec(tape.sub(next_head, prev_tail),
                                                             tape.constant(std::move(wv))));
            parts.push_back(blend);
            pos = w.end;
        } else {
            pos = w.end;
        }
    }
    return tape.concat_rows(parts);
}

// Eqs: v_t = Ws S_t + bs; g_t = sigmoid(Wg hbar_t + bg); vt~ = g_t * v_t;
// c_t = [hbar_t ; vt~].
template <class S>
struct GateWeights {
    Tensor<S> ws, bs; // [d_p, spectrum bins], [d_p]
    Tensor<S> wg, bg; // [d_p, acoustic hidden], [d_p]

    static GateWeights random_init(int d_p, int spectrum_bins, int hidden, uint64_t seed) {
        GateWeights g;
        auto mat = [&](std::string_view name, int out, int in) {
            Tensor<S> t({out, in});
            Rng rng(seed, std::string("gate/") + std::string(name));
            for (S& v : t.data) v = S(rng.trunc_normal(0.02));
            return t;
        };
        g.ws = mat("ws", d_p, spectrum_bins);
        g.bs = Tensor<S>({d_p});
        g.wg = mat("wg", d_p, hidden);
        g.bg = Tensor<S>({d_p});
        return g;
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        fn(std::string("ws"), ws);
        fn(std::string("bs"), bs);
        fn(std::string("wg"), wg);
        fn(std::string("bg"), bg);
    }
};

template <class S>
struct GateNodes {
    using Id = typename Tape<S>::Id;
    Id ws, bs, wg, bg;

    template <class Fn>
    void for_each(Fn&& fn) const {
        fn(std::string("ws"), ws);
        fn(std::string("bs"), bs);
        fn(std::string("wg"), wg);
        fn(std::string("bg"), bg);
    }
};

template <class S>
GateNodes<S> stage_gate(Tape<S>& tape, const GateWeights<S>& g, bool trainable) {
    return {tape.leaf(g.ws, trainable), tape.leaf(g.bs, trainable), tape.leaf(g.wg, trainable),
            tape.leaf(g.bg, trainable)};
}

template <class S>
typename Tape<S>::Id gate_fuse(Tape<S>& tape, typename Tape<S>::Id merged,
                               typename Tape<S>::Id spectrum, const GateNodes<S>& g) {
    auto v = tape.linear(spectrum, g.ws, g.bs);
    auto gate = tape.sigmoid(tape.linear(merged, g.wg, g.bg));
    auto gated = tape.mul(gate, v);
    return tape.concat_cols(merged, gated);
}

// mean / population-std / max over time, concatenated in that order
template <class S>
typename Tape<S>::Id pool_stats(Tape<S>& tape, typename Tape<S>::Id features) {
    auto mean = tape.pool_mean(features);
    auto stdev = tape.pool_std(features);
    auto mx = tape.pool_max(features);
    return tape.concat_cols(tape.concat_cols(mean, stdev), mx);
}

// classifier: pooled -> hidden -> classes
template <class S>
struct HeadWeights {
    Tensor<S> w1, b1; // [head_hidden, 3*task hidden]
    Tensor<S> w2, b2; // [classes, head_hidden]

    static HeadWeights random_init(int pooled_width, int head_hidden, int classes, uint64_t seed) {
        HeadWeights h;
        auto mat = [&](std::string_view name, int out, int in) {
            Tensor<S> t({out, in});
            Rng rng(seed, std::string("head/") + std::string(name));
            for (S& v : t.data) v = S(rng.trunc_normal(0.02));
            return t;
        };
        h.w1 = mat("w1", head_hidden, pooled_width);
        h.b1 = Tensor<S>({head_hidden});
        h.w2 = mat("w2", classes, head_hidden);
        h.b2 = Tensor<S>({classes});
        return h;
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        fn(std::string("w1"), w1);
        fn(std::string("b1"), b1);
        fn(std::string("w2"), w2);
        fn(std::string("b2"), b2);
    }

    int classes() const { return w2.rows(); }
};

template <class S>
struct HeadNodes {
    using Id = typename Tape<S>::Id;
    Id w1, b1, w2, b2;

    template <class Fn>
    void for_each(Fn&& fn) const {
        fn(std::string("w1"), w1);
        fn(std::string("b1"), b1);
        fn(std::string("w2"), w2);
        fn(std::string("b2"), b2);
    }
};

template <class S>
HeadNodes<S> stage_head(Tape<S>& tape, const HeadWeights<S>& h, bool trainable) {
    return {tape.leaf(h.w1, trainable), tape.leaf(h.b1, trainable), tape.leaf(h.w2, trainable),
            tape.leaf(h.b2, trainable)};
}

// Full stage-3 model. Task encoder input width is acoustic hidden + d_p,
// or just acoustic hidden in no_spectrum mode.
template <class S>
struct DownstreamWeights {
    FineTuneMode mode = FineTuneMode::base;
    int d_p = 128;
    EncoderWeights<S> acoustic;
    GateWeights<S> gate;
    EncoderWeights<S> task;
    HeadWeights<S> head;

    static DownstreamWeights random_init(const EncoderConfig& acoustic_cfg,
                                         const EncoderConfig& task_cfg_base, int d_p,
                                         int spectrum_bins, int head_hidden, int classes,
                                         FineTuneMode mode, uint64_t seed) {
        DownstreamWeights w;
        w.mode = mode;
        w.d_p = d_p;
        w.acoustic = EncoderWeights<S>::random_init(acoustic_cfg, seed, "acoustic");
        w.gate = GateWeights<S>::random_init(d_p, spectrum_bins, acoustic_cfg.hidden, seed);
        EncoderConfig task_cfg = task_cfg_base;
        task_cfg.input_width =
            mode == FineTuneMode::no_spectrum ? acoustic_cfg.hidden : acoustic_cfg.hidden + d_p;
        w.task = EncoderWeights<S>::random_init(task_cfg, seed, "task");
        w.head = HeadWeights<S>::random_init(3 * task_cfg.hidden, head_hidden, classes, seed);
        return w;
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        acoustic.for_each([&](const std::string& n, Tensor<S>& t) { fn("acoustic/" + n, t); });
        gate.for_each([&](const std::string& n, Tensor<S>& t) { fn("gate/" + n, t); });
        task.for_each([&](const std::string& n, Tensor<S>& t) { fn("task/" + n, t); });
        head.for_each([&](const std::string& n, Tensor<S>& t) { fn("head/" + n, t); });
    }
};

template <class S>
struct DownstreamNodes {
    using Id = typename Tape<S>::Id;
    FineTuneMode mode = FineTuneMode::base;
    EncoderNodes<S> acoustic;
    GateNodes<S> gate;
    EncoderNodes<S> task;
    HeadNodes<S> head;

    template <class Fn>
    void for_each(Fn&& fn) const {
        acoustic.for_each([&](const std::string& n, Id id) { fn("acoustic/" + n, id); });
        gate.for_each([&](const std::string& n, Id id) { fn("gate/" + n, id); });
        task.for_each([&](const std::string& n, Id id) { fn("task/" + n, id); });
        head.for_each([&](const std::string& n, Id id) { fn("head/" + n, id); });
    }
};

// transfer mode freezes the acoustic encoder; everything else trains
template <class S>
DownstreamNodes<S> stage_downstream(Tape<S>& tape, const DownstreamWeights<S>& w, bool trainable) {
    DownstreamNodes<S> n;
    n.mode = w.mode;
    const bool acoustic_trainable = trainable && w.mode != FineTuneMode::transfer;
    n.acoustic = stage_encoder(tape, w.acoustic, acoustic_trainable);
    n.gate = stage_gate(tape, w.gate, trainable);
    n.task = stage_encoder(tape, w.task, trainable);
    n.head = stage_head(tape, w.head, trainable);
    return n;
}

// patches/spectrum -> class logits [1, classes]
template <class S>
typename Tape<S>::Id downstream_logits(Tape<S>& tape, const DownstreamNodes<S>& w,
                                       typename Tape<S>::Id patches,
                                       typename Tape<S>::Id spectrum, const FrontendConfig& cfg,
                                       bool meter_phases = false) {
    const int n_tokens = tape.value(patches).rows();
    const ChunkLayout layout = layout_chunks(n_tokens, ChunkMode::inference, cfg);

    std::vector<typename Tape<S>::Id> chunk_features;
    for (const auto& win : layout.windows) {
        auto chunk = tape.slice_rows(patches, win.begin, win.end);
        chunk_features.push_back(encode(tape, w.acoustic, chunk, nullptr, meter_phases));
    }

    typename Tape<S>::Id merged;
    typename Tape<S>::Id fused;
    {
        PhaseScope phase(FlopPhase::gating);
        merged = crossfade_merge(tape, chunk_features, layout);
        fused = w.mode == FineTuneMode::no_spectrum ? merged
                                                    : gate_fuse(tape, merged, spectrum, w.gate);
    }
    typename Tape<S>::Id task_out;
    {
        PhaseScope phase(FlopPhase::task);
        task_out = encode(tape, w.task, fused);
    }
    PhaseScope phase(FlopPhase::head);
    auto pooled = pool_stats(tape, task_out);
    return tape.linear(tape.gelu(tape.linear(pooled, w.head.w1, w.head.b1)), w.head.w2, w.head.b2);
}

} // namespace hear
