#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hear/encoder.hpp"
#include "hear/rng.hpp"
#include "hear/tape.hpp"

namespace hear {

// tau(step) = max(floor, start * decay^step)
struct TemperatureSchedule {
    double start = 2.0;
    double decay = 0.999995;
    double floor = 0.5;

    double at(int64_t step) const {
        if (step < 0) throw ConfigError("temperature schedule: negative step");
        return std::max(floor, start * std::pow(decay, double(step)));
    }
};

inline double tau_at(int64_t step) { return TemperatureSchedule{}.at(step); }

struct LossWeights {
    double alpha = 0.3; // reconstruction
    double beta = 0.7;  // distillation
    double gamma = 0.1; // diversity
};

// Eq.-style combination, kept in double so the reported total decomposes
// exactly for any weights.
inline double combine_losses(const LossWeights& w, double rec, double distill, double div) {
    return w.alpha * rec + w.beta * distill + w.gamma * div;
}

struct TokenizerLosses {
    double rec = 0.0;
    double distill = 0.0;
    double div = 0.0;
    double total = 0.0;
};

struct TokenizerConfig {
    EncoderConfig encoder; // input_width = patch width
    EncoderConfig decoder; // input_width = code_dim
    int codebook_size = 1024;
    int code_dim = 32;
    int teacher_dim = 256;

    void validate() const {
        encoder.validate();
        decoder.validate();
        if (codebook_size < 2) throw ConfigError("tokenizer: codebook_size must be >= 2");
        if (code_dim < 1) throw ConfigError("tokenizer: code_dim must be >= 1");
        if (decoder.input_width != code_dim)
            throw ConfigError("tokenizer: decoder input width must equal code_dim");
    }

    static TokenizerConfig defaults(int patch_width, int teacher_dim_ = 256) {
        TokenizerConfig c;
        c.encoder = make_config("tokenizer");
        c.encoder.input_width = patch_width;
        c.decoder = make_config("decoder");
        c.decoder.input_width = c.code_dim;
        c.teacher_dim = teacher_dim_;
        return c;
    }
};

template <class S>
struct TokenizerWeights {
    TokenizerConfig cfg;
    EncoderWeights<S> encoder;
    Tensor<S> quant_w, quant_b;     // hidden -> V logits
    Tensor<S> codebook;             // [V, code_dim]
    EncoderWeights<S> decoder;
    Tensor<S> recon_w, recon_b;     // decoder hidden -> patch width
    Tensor<S> distill_w, distill_b; // decoder hidden -> teacher width

    static TokenizerWeights random_init(const TokenizerConfig& cfg, uint64_t seed) {
        cfg.validate();
        TokenizerWeights w;
        w.cfg = cfg;
        w.encoder = EncoderWeights<S>::random_init(cfg.encoder, seed, "tokenizer/encoder");
        w.decoder = EncoderWeights<S>::random_init(cfg.decoder, seed, "tokenizer/decoder");
        auto mat = [&](std::string_view name, int out, int in) {
            Tensor<S> t({out, in});
            Rng rng(seed, std::string("tokenizer/") + std::string(name));
            for (S& v : t.data) v = S(rng.trunc_normal(0.02));
            return t;
        };
        w.quant_w = mat("quant_w", cfg.codebook_size, cfg.encoder.hidden);
        w.quant_b = Tensor<S>({cfg.codebook_size});
        w.codebook = mat("codebook", cfg.codebook_size, cfg.code_dim);
        w.recon_w = mat("recon_w", cfg.encoder.input_width, cfg.decoder.hidden);
        w.recon_b = Tensor<S>({cfg.encoder.input_width});
        w.distill_w = mat("distill_w", cfg.teacher_dim, cfg.decoder.hidden);
        w.distill_b = Tensor<S>({cfg.teacher_dim});
        return w;
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        encoder.for_each([&](const std::string& n, Tensor<S>& t) { fn("encoder/" + n, t); });
        fn(std::string("quant_w"), quant_w);
        fn(std::string("quant_b"), quant_b);
        fn(std::string("codebook"), codebook);
        decoder.for_each([&](const std::string& n, Tensor<S>& t) { fn("decoder/" + n, t); });
        fn(std::string("recon_w"), recon_w);
        fn(std::string("recon_b"), recon_b);
        fn(std::string("distill_w"), distill_w);
        fn(std::string("distill_b"), distill_b);
    }

    int64_t param_count() {
        int64_t n = 0;
        for_each([&](const std::string&, Tensor<S>& t) { n += t.size(); });
        return n;
    }
};

template <class S>
struct TokenizerNodes {
    using Id = typename Tape<S>::Id;
    EncoderNodes<S> encoder;
    Id quant_w, quant_b, codebook;
    EncoderNodes<S> decoder;
    Id recon_w, recon_b, distill_w, distill_b;

    template <class Fn>
    void for_each(Fn&& fn) const {
        encoder.for_each([&](const std::string& n, Id id) { fn("encoder/" + n, id); });
        fn(std::string("quant_w"), quant_w);
        fn(std::string("quant_b"), quant_b);
        fn(std::string("codebook"), codebook);
        decoder.for_each([&](const std::string& n, Id id) { fn("decoder/" + n, id); });
        fn(std::string("recon_w"), recon_w);
        fn(std::string("recon_b"), recon_b);
        fn(std::string("distill_w"), distill_w);
        fn(std::string("distill_b"), distill_b);
    }
};

template <class S>
TokenizerNodes<S> stage_tokenizer(Tape<S>& tape, const TokenizerWeights<S>& w, bool trainable) {
    TokenizerNodes<S> n;
    n.encoder = stage_encoder(tape, w.encoder, trainable);
    n.quant_w = tape.leaf(w.quant_w, trainable);
    n.quant_b = tape.leaf(w.quant_b, trainable);
    n.codebook = tape.leaf(w.codebook, trainable);
    n.decoder = stage_encoder(tape, w.decoder, trainable);
    n.recon_w = tape.leaf(w.recon_w, trainable);
    n.recon_b = tape.leaf(w.recon_b, trainable);
    n.distill_w = tape.leaf(w.distill_w, trainable);
    n.distill_b = tape.leaf(w.distill_b, trainable);
    return n;
}

template <class S>
struct QuantizerOutput {
    using Id = typename Tape<S>::Id;
    Id probs = -1;               // [N, V], rows sum to 1
    std::vector<int> hard_index; // argmax per token
    Id quantized = -1;           // [N, code_dim]; soft mixture or straight-through hard
};

// Gumbel-Softmax quantization against the staged codebook. `noise` is an
// optional pre-drawn [N, V] Gumbel sample (constant on the tape); the
// inference path passes none and hard=true, which reduces to plain argmax
// lookup with no stochasticity.
template <class S>
QuantizerOutput<S> gumbel_quantize(Tape<S>& tape, typename Tape<S>::Id logits,
                                   typename Tape<S>::Id codebook, double tau,
                                   const Tensor<S>* noise, bool hard) {
    if (!(tau > 0)) throw ConfigError("gumbel_quantize: tau must be positive");
    const Tensor<S>& L = tape.value(logits);
    if (!L.all_finite()) throw NumericError("gumbel_quantize: non-finite logits");

    auto perturbed = logits;
    if (noise) {
        if (noise->rows() != L.rows() || noise->cols() != L.cols())
            throw NumericError("gumbel_quantize: noise shape mismatch");
        perturbed = tape.add(logits, tape.constant(*noise));
    }
    QuantizerOutput<S> out;
    out.probs = tape.softmax_rows(tape.scale(perturbed, S(1.0 / tau)));

    const Tensor<S>& p = tape.value(out.probs);
    out.hard_index.resize(static_cast<size_t>(p.rows()));
    for (int r = 0; r < p.rows(); ++r) {
        int best = 0;
        for (int c = 1; c < p.cols(); ++c)
            if (p.at(r, c) > p.at(r, best)) best = c;
        out.hard_index[static_cast<size_t>(r)] = best;
    }

    auto soft = tape.matmul(out.probs, codebook);
    if (hard) {
        // straight-through: hard one-hot mixture forward, soft gradients
        auto hard_rows = tape.gather_rows(codebook, out.hard_index);
        out.quantized = tape.add(soft, tape.detach(tape.sub(hard_rows, soft)));
    } else {
        out.quantized = soft;
    }
    return out;
}

// --- the three objective terms of stage 1 ---

template <class S>
typename Tape<S>::Id reconstruction_loss(Tape<S>& tape, typename Tape<S>::Id reconstructed,
                                         typename Tape<S>::Id original) {
    if (!tape.value(reconstructed).same_shape(tape.value(original)))
        throw NumericError("reconstruction_loss: shape mismatch");
    return tape.mean_all(tape.square(tape.sub(reconstructed, original)));
}

template <class S>
typename Tape<S>::Id diversity_loss(Tape<S>& tape, typename Tape<S>::Id probs) {
    const int v = tape.value(probs).cols();
    auto mean_assign = tape.mean_rows(probs);
    return tape.mean_all(tape.square(tape.add_const(mean_assign, S(-1.0 / v))));
}

template <class S>
typename Tape<S>::Id distillation_loss(Tape<S>& tape, typename Tape<S>::Id projected_decoder_out,
                                       typename Tape<S>::Id teacher_out) {
    if (!tape.value(projected_decoder_out).same_shape(tape.value(teacher_out)))
        throw NumericError("distillation_loss: teacher/student shape mismatch");
    auto cos = tape.cosine_rows(projected_decoder_out, teacher_out);
    return tape.add_const(tape.scale(tape.mean_all(cos), S(-1)), S(1));
}

// One full tokenizer forward on a single patch sequence.
template <class S>
struct TokenizerForward {
    using Id = typename Tape<S>::Id;
    QuantizerOutput<S> quant;
    Id recon = -1;      // [N, patch width]
    Id dec_hidden = -1; // [N, decoder hidden]
    Id l_rec = -1, l_div = -1, l_distill = -1, l_total = -1;
};

template <class S>
TokenizerForward<S> tokenizer_forward(Tape<S>& tape, const TokenizerNodes<S>& w,
                                      typename Tape<S>::Id patches,
                                      typename Tape<S>::Id teacher_features,
                                      const LossWeights& lw, double tau, const Tensor<S>* noise,
                                      bool hard) {
    TokenizerForward<S> f;
    auto hidden = encode(tape, w.encoder, patches);
    auto logits = tape.linear(hidden, w.quant_w, w.quant_b);
    f.quant = gumbel_quantize(tape, logits, w.codebook, tau, noise, hard);
    f.dec_hidden = encode(tape, w.decoder, f.quant.quantized);
    f.recon = tape.linear(f.dec_hidden, w.recon_w, w.recon_b);
    f.l_rec = reconstruction_loss(tape, f.recon, patches);
    f.l_div = diversity_loss(tape, f.quant.probs);
    auto projected = tape.linear(f.dec_hidden, w.distill_w, w.distill_b);
    f.l_distill = distillation_loss(tape, projected, teacher_features);
    f.l_total = tape.add(tape.add(tape.scale(f.l_rec, S(lw.alpha)), tape.scale(f.l_distill, S(lw.beta))),
                         tape.scale(f.l_div, S(lw.gamma)));
    return f;
}

// Deterministic inference tokenization: no noise, hard argmax indices.
template <class S>
std::vector<int> tokenize(const TokenizerWeights<S>& w, const Tensor<S>& patches) {
    Tape<S> tape;
    auto nodes = stage_tokenizer(tape, w, false);
    auto hidden = encode(tape, nodes.encoder, tape.constant(patches));
    auto logits = tape.linear(hidden, nodes.quant_w, nodes.quant_b);
    auto q = gumbel_quantize<S>(tape, logits, nodes.codebook, 1.0, nullptr, true);
    return q.hard_index;
}

} // namespace hear
