#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hear/flops_meter.hpp"
#include "hear/rng.hpp"
#include "hear/tape.hpp"

namespace hear {

// Pre-LN Transformer encoder with learned per-head relative-position biases
// (distances clipped at +-k). One parameterization serves the Tokenizer,
// Decoder, Acoustic Model and Task Model.
struct EncoderConfig {
    int hidden = 384;
    int intermediate = 1536;
    int heads = 4;
    int layers = 6;
    int max_relative_distance = 64;
    int input_width = 256;

    void validate() const {
        if (hidden <= 0 || intermediate <= 0 || heads <= 0 || layers <= 0 || input_width <= 0)
            throw ConfigError("encoder config: all sizes must be >= 1");
        if (hidden % heads != 0) throw ConfigError("encoder config: hidden must divide by heads");
        if (max_relative_distance < 1)
            throw ConfigError("encoder config: max_relative_distance must be >= 1");
    }

    int head_dim() const { return hidden / heads; }
};

// Module table: (hidden, intermediate, heads, layers). input_width is the
// caller's business and keeps its default here.
inline EncoderConfig make_config(std::string_view module_name) {
    EncoderConfig c;
    if (module_name == "tokenizer") {
        c.hidden = 128; c.intermediate = 512; c.heads = 4; c.layers = 6;
    } else if (module_name == "decoder") {
        c.hidden = 128; c.intermediate = 512; c.heads = 4; c.layers = 2;
    } else if (module_name == "acoustic") {
        c.hidden = 384; c.intermediate = 1536; c.heads = 4; c.layers = 6;
    } else if (module_name == "task") {
        c.hidden = 384; c.intermediate = 1536; c.heads = 4; c.layers = 1;
    } else {
        throw ConfigError("make_config: unknown module '" + std::string(module_name) + "'");
    }
    return c;
}

inline int relative_index(int i, int j, int k) { return Tape<float>::relative_index(i, j, k); }

template <class S>
struct EncoderWeights {
    EncoderConfig cfg;

    // no key bias: softmax normalization cancels a per-row constant shift,
    // so it would be a pure null direction
    struct Layer {
        Tensor<S> wq, bq, wk, wv, bv, wo, bo; // attention, [hidden,hidden] + [hidden]
        Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor<S> wf1, bf1, wf2, bf2;         // ffn
        Tensor<S> rel;                        // [heads, 2k+1] logit biases
    };

    Tensor<S> embed_w, embed_b; // input projection [hidden, input_width]
    std::vector<Layer> layers;
    Tensor<S> final_g, final_b;

    static EncoderWeights random_init(const EncoderConfig& cfg, uint64_t seed,
                                      std::string_view name) {
        cfg.validate();
        EncoderWeights w;
        w.cfg = cfg;
        const int d = cfg.hidden, f = cfg.intermediate;
        const int table = 2 * cfg.max_relative_distance + 1;
        auto mat = [&](std::string_view param, int out, int in) {
            Tensor<S> t({out, in});
            Rng rng(seed, std::string(name) + "/" + std::string(param));
            for (S& v : t.data) v = S(rng.trunc_normal(0.02));
            return t;
        };
        w.embed_w = mat("embed_w", d, cfg.input_width);
        w.embed_b = Tensor<S>({d});
        for (int l = 0; l < cfg.layers; ++l) {
            Layer layer;
            const std::string p = "layer" + std::to_string(l) + "/";
            layer.wq = mat(p + "wq", d, d); layer.bq = Tensor<S>({d});
            layer.wk = mat(p + "wk", d, d);
            layer.wv = mat(p + "wv", d, d); layer.bv = Tensor<S>({d});
            layer.wo = mat(p + "wo", d, d); layer.bo = Tensor<S>({d});
            layer.ln1_g = Tensor<S>({d}, S(1)); layer.ln1_b = Tensor<S>({d});
            layer.ln2_g = Tensor<S>({d}, S(1)); layer.ln2_b = Tensor<S>({d});
            layer.wf1 = mat(p + "wf1", f, d); layer.bf1 = Tensor<S>({f});
            layer.wf2 = mat(p + "wf2", d, f); layer.bf2 = Tensor<S>({d});
            layer.rel = mat(p + "rel", cfg.heads, table);
            w.layers.push_back(std::move(layer));
        }
        w.final_g = Tensor<S>({d}, S(1));
        w.final_b = Tensor<S>({d});
        return w;
    }

    template <class Fn> // Fn(name, Tensor<S>&)
    void for_each(Fn&& fn) {
        fn("embed_w", embed_w);
        fn("embed_b", embed_b);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + "/";
            Layer& y = layers[l];
            fn(p + "wq", y.wq); fn(p + "bq", y.bq);
            fn(p + "wk", y.wk);
            fn(p + "wv", y.wv); fn(p + "bv", y.bv);
            fn(p + "wo", y.wo); fn(p + "bo", y.bo);
            fn(p + "ln1_g", y.ln1_g); fn(p + "ln1_b", y.ln1_b);
            fn(p + "ln2_g", y.ln2_g); fn(p + "ln2_b", y.ln2_b);
            fn(p + "wf1", y.wf1); fn(p + "bf1", y.bf1);
            fn(p + "wf2", y.wf2); fn(p + "bf2", y.bf2);
            fn(p + "rel", y.rel);
        }
        fn("final_g", final_g);
        fn("final_b", final_b);
    }

    int64_t param_count() {
        int64_t n = 0;
        for_each([&](const std::string&, Tensor<S>& t) { n += t.size(); });
        return n;
    }
};

// Tape-resident mirror of EncoderWeights. Staging order matches for_each.
template <class S>
struct EncoderNodes {
    using Id = typename Tape<S>::Id;
    EncoderConfig cfg;

    struct Layer {
        Id wq, bq, wk, wv, bv, wo, bo;
        Id ln1_g, ln1_b, ln2_g, ln2_b;
        Id wf1, bf1, wf2, bf2;
        Id rel;
    };

    Id embed_w, embed_b;
    std::vector<Layer> layers;
    Id final_g, final_b;

    template <class Fn> // Fn(name, Id)
    void for_each(Fn&& fn) const {
        fn("embed_w", embed_w);
        fn("embed_b", embed_b);
        for (size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + "/";
            const Layer& y = layers[l];
            fn(p + "wq", y.wq); fn(p + "bq", y.bq);
            fn(p + "wk", y.wk);
            fn(p + "wv", y.wv); fn(p + "bv", y.bv);
            fn(p + "wo", y.wo); fn(p + "bo", y.bo);
            fn(p + "ln1_g", y.ln1_g); fn(p + "ln1_b", y.ln1_b);
            fn(p + "ln2_g", y.ln2_g); fn(p + "ln2_b", y.ln2_b);
            fn(p + "wf1", y.wf1); fn(p + "bf1", y.bf1);
            fn(p + "wf2", y.wf2); fn(p + "bf2", y.bf2);
            fn(p + "rel", y.rel);
        }
        fn("final_g", final_g);
        fn("final_b", final_b);
    }
};

template <class S>
EncoderNodes<S> stage_encoder(Tape<S>& tape, const EncoderWeights<S>& w, bool trainable) {
    EncoderNodes<S> nodes;
    nodes.cfg = w.cfg;
    nodes.layers.resize(w.layers.size());
    size_t li = 0;
    auto* layer_nodes = nodes.layers.data();
    nodes.embed_w = tape.leaf(w.embed_w, trainable);
    nodes.embed_b = tape.leaf(w.embed_b, trainable);
    for (const auto& y : w.layers) {
        auto& n = layer_nodes[li++];
        n.wq = tape.leaf(y.wq, trainable); n.bq = tape.leaf(y.bq, trainable);
        n.wk = tape.leaf(y.wk, trainable);
        n.wv = tape.leaf(y.wv, trainable); n.bv = tape.leaf(y.bv, trainable);
        n.wo = tape.leaf(y.wo, trainable); n.bo = tape.leaf(y.bo, trainable);
        n.ln1_g = tape.leaf(y.ln1_g, trainable); n.ln1_b = tape.leaf(y.ln1_b, trainable);
        n.ln2_g = tape.leaf(y.ln2_g, trainable); n.ln2_b = tape.leaf(y.ln2_b, trainable);
        n.wf1 = tape.leaf(y.wf1, trainable); n.bf1 = tape.leaf(y.bf1, trainable);
        n.wf2 = tape.leaf(y.wf2, trainable); n.bf2 = tape.leaf(y.bf2, trainable);
        n.rel = tape.leaf(y.rel, trainable);
    }
    nodes.final_g = tape.leaf(w.final_g, trainable);
    nodes.final_b = tape.leaf(w.final_b, trainable);
    return nodes;
}

// Forward pass over one (chunk-local) token sequence. `valid` optionally
// marks real positions; padded positions are excluded from attention.
// With meter_split the cost phases embedding / attention_linear /
// attention_quadratic / ffn are reported separately (final norm counts
// towards ffn); otherwise everything lands in the caller's ambient phase.
template <class S>
typename Tape<S>::Id encode(Tape<S>& tape, const EncoderNodes<S>& w,
                            typename Tape<S>::Id tokens,
                            const std::vector<uint8_t>* valid = nullptr,
                            bool meter_split = false) {
    const EncoderConfig& cfg = w.cfg;
    const Tensor<S>& in = tape.value(tokens);
    if (in.cols() != cfg.input_width)
        throw NumericError("encode: token width " + std::to_string(in.cols()) +
                           " does not match input_width " + std::to_string(cfg.input_width));
    if (in.rows() < 1) throw NumericError("encode: empty sequence");

    const int dh = cfg.head_dim();
    const S inv_sqrt_dh = S(1) / std::sqrt(S(dh));
    auto phase = [&](FlopPhase p) {
        return meter_split ? std::optional<PhaseScope>(std::in_place, p) : std::nullopt;
    };

    typename Tape<S>::Id x;
    {
        auto ph = phase(FlopPhase::embedding);
        x = tape.linear(tokens, w.embed_w, w.embed_b);
    }
    for (int l = 0; l < cfg.layers; ++l) {
        const auto& y = w.layers[static_cast<size_t>(l)];
        typename Tape<S>::Id q, k, v;
        {
            auto ph = phase(FlopPhase::attention_linear);
            auto h = tape.layer_norm_rows(x, y.ln1_g, y.ln1_b);
            q = tape.linear(h, y.wq, y.bq);
            k = tape.matmul_nt(h, y.wk);
            v = tape.linear(h, y.wv, y.bv);
        }
        typename Tape<S>::Id heads_out = Tape<S>::kNone;
        {
            auto ph = phase(FlopPhase::attention_quadratic);
            for (int hd = 0; hd < cfg.heads; ++hd) {
                auto qh = tape.slice_cols(q, hd * dh, (hd + 1) * dh);
                auto kh = tape.slice_cols(k, hd * dh, (hd + 1) * dh);
                auto vh = tape.slice_cols(v, hd * dh, (hd + 1) * dh);
                auto logits = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
                auto table = tape.slice_rows(y.rel, hd, hd + 1);
                logits = tape.rel_bias_add(logits, table, cfg.max_relative_distance);
                auto attn = tape.softmax_rows(logits, valid);
                auto ctx = tape.matmul(attn, vh);
                heads_out = hd == 0 ? ctx : tape.concat_cols(heads_out, ctx);
            }
        }
        {
            auto ph = phase(FlopPhase::attention_linear);
            x = tape.add(x, tape.linear(heads_out, y.wo, y.bo));
        }
        {
            auto ph = phase(FlopPhase::ffn);
            auto h2 = tape.layer_norm_rows(x, y.ln2_g, y.ln2_b);
            auto ff = tape.linear(tape.gelu(tape.linear(h2, y.wf1, y.bf1)), y.wf2, y.bf2);
            x = tape.add(x, ff);
        }
    }
    auto ph = phase(FlopPhase::ffn);
    return tape.layer_norm_rows(x, w.final_g, w.final_b);
}

} // namespace hear
