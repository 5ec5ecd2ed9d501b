#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hear/encoder.hpp"
#include "hear/rng.hpp"
#include "hear/tape.hpp"

namespace hear {

// Indices masked within one instance. Default realization draws an exact
// count round(ratio*N) without replacement; the bernoulli switch masks each
// position independently with probability ratio instead.
struct MaskPlan {
    std::vector<int> indices; // sorted, unique, < n
    int n = 0;
    double ratio = 0.40;

    std::vector<uint8_t> flags() const {
        std::vector<uint8_t> f(static_cast<size_t>(n), 0);
        for (int i : indices) f[static_cast<size_t>(i)] = 1;
        return f;
    }
};

inline MaskPlan sample_mask(int n, Rng& rng, double ratio = 0.40, bool bernoulli = false) {
    if (n < 1) throw DataError("sample_mask: need at least one position");
    if (ratio < 0.0 || ratio > 1.0) throw ConfigError("sample_mask: ratio outside [0,1]");
    MaskPlan plan;
    plan.n = n;
    plan.ratio = ratio;
    if (bernoulli) {
        for (int i = 0; i < n; ++i)
            if (rng.uniform() < ratio) plan.indices.push_back(i);
    } else {
        const int k = static_cast<int>(std::lround(ratio * n));
        plan.indices = rng.sample_without_replacement(n, k);
    }
    return plan;
}

// zero replacement at masked positions, bit-identical elsewhere
template <class S>
Tensor<S> apply_mask(const Tensor<S>& patches, const MaskPlan& plan) {
    if (plan.n != patches.rows()) throw DataError("apply_mask: plan length mismatch");
    Tensor<S> out = patches;
    for (int i : plan.indices) {
        if (i < 0 || i >= patches.rows()) throw DataError("apply_mask: index out of range");
        for (int c = 0; c < patches.cols(); ++c) out.at(i, c) = S(0);
    }
    return out;
}

// Mean cross-entropy over masked positions only; |M| = 0 yields 0 and sets
// the warning flag.
template <class S>
typename Tape<S>::Id mam_loss(Tape<S>& tape, typename Tape<S>::Id logits,
                              const std::vector<int>& targets, const MaskPlan& plan,
                              bool* empty_mask_warning = nullptr) {
    if (empty_mask_warning) *empty_mask_warning = plan.indices.empty();
    return tape.cross_entropy_rows(logits, targets, plan.flags());
}

template <class S>
struct MamWeights {
    EncoderWeights<S> acoustic;
    Tensor<S> head_w, head_b; // hidden -> V prediction head

    static MamWeights random_init(const EncoderConfig& acoustic_cfg, int vocab, uint64_t seed) {
        MamWeights w;
        w.acoustic = EncoderWeights<S>::random_init(acoustic_cfg, seed, "acoustic");
        w.head_w = Tensor<S>({vocab, acoustic_cfg.hidden});
        Rng rng(seed, "mam/head_w");
        for (S& v : w.head_w.data) v = S(rng.trunc_normal(0.02));
        w.head_b = Tensor<S>({vocab});
        return w;
    }

    template <class Fn>
    void for_each(Fn&& fn) {
        acoustic.for_each([&](const std::string& n, Tensor<S>& t) { fn("acoustic/" + n, t); });
        fn(std::string("mam_head_w"), head_w);
        fn(std::string("mam_head_b"), head_b);
    }
};

template <class S>
struct MamNodes {
    using Id = typename Tape<S>::Id;
    EncoderNodes<S> acoustic;
    Id head_w, head_b;

    template <class Fn>
    void for_each(Fn&& fn) const {
        acoustic.for_each([&](const std::string& n, Id id) { fn("acoustic/" + n, id); });
        fn(std::string("mam_head_w"), head_w);
        fn(std::string("mam_head_b"), head_b);
    }
};

template <class S>
MamNodes<S> stage_mam(Tape<S>& tape, const MamWeights<S>& w, bool trainable) {
    MamNodes<S> n;
    n.acoustic = stage_encoder(tape, w.acoustic, trainable);
    n.head_w = tape.leaf(w.head_w, trainable);
    n.head_b = tape.leaf(w.head_b, trainable);
    return n;
}

// corrupted patches -> logits at every position (loss later reads only M)
template <class S>
typename Tape<S>::Id mam_logits(Tape<S>& tape, const MamNodes<S>& w,
                                typename Tape<S>::Id corrupted_patches) {
    auto features = encode(tape, w.acoustic, corrupted_patches);
    return tape.linear(features, w.head_w, w.head_b);
}

} // namespace hear
