#pragma once

#include <memory>

#include "hear/encoder.hpp"
#include "hear/tape.hpp"

namespace hear {

// Frozen feature extractor guiding tokenizer training. Any external model
// can sit behind this interface; at desk scale the stub below stands in for
// a pre-trained teacher.
template <class S>
class Teacher {
public:
    virtual ~Teacher() = default;
    virtual int dim() const = 0;
    // [N, patch width] -> [N, dim], deterministic, never trained
    virtual Tensor<S> features(const Tensor<S>& patches) const = 0;
};

template <class S>
class FrozenRandomTeacher : public Teacher<S> {
public:
    FrozenRandomTeacher(const EncoderConfig& cfg, uint64_t seed)
        : weights_(EncoderWeights<S>::random_init(cfg, seed, "teacher")) {}

    int dim() const override { return weights_.cfg.hidden; }

    Tensor<S> features(const Tensor<S>& patches) const override {
        Tape<S> tape;
        auto nodes = stage_encoder(tape, weights_, false);
        return tape.value(encode(tape, nodes, tape.constant(patches)));
    }

private:
    EncoderWeights<S> weights_;
};

} // namespace hear
