#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hear/common.hpp"
#include "hear/optim.hpp"
#include "hear/tensor.hpp"

namespace hear {

// Binary checkpoint: fixed little-endian layout of named f32 blobs plus the
// run header. Blob order is preserved, so save -> load -> save is
// byte-identical. RNG needs no stored state: draws are keyed by
// (seed, stream, step).
struct Checkpoint {
    static constexpr uint32_t kVersion = 1;

    uint64_t config_hash = 0; // full run identity; guards resume
    uint64_t struct_hash = 0; // frontend+model identity; guards cross-stage loads
    uint64_t seed = 0;
    uint64_t step = 0;
    uint8_t stage = 0; // 1 = tokenizer, 2 = mam, 3 = downstream
    uint8_t mode = 0;  // downstream FineTuneMode ordinal

    std::vector<std::pair<std::string, Tensorf>> blobs;

    void add(const std::string& name, const Tensorf& t);
    const Tensorf* find(const std::string& name) const;
    const Tensorf& require(const std::string& name) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
};

// weight-struct helpers: stores/loads every tensor reachable via for_each
template <class W>
void checkpoint_store(Checkpoint& ckpt, const std::string& prefix, W& weights) {
    weights.for_each([&](const std::string& n, Tensorf& t) { ckpt.add(prefix + n, t); });
}

template <class W>
void checkpoint_restore(const Checkpoint& ckpt, const std::string& prefix, W& weights) {
    weights.for_each([&](const std::string& n, Tensorf& t) {
        const Tensorf& saved = ckpt.require(prefix + n);
        if (saved.rows() != t.rows() || saved.cols() != t.cols())
            throw DataError("checkpoint: shape mismatch for " + prefix + n + " (stored " +
                            saved.shape_str() + ")");
        t = saved;
    });
}

void checkpoint_store_optimizer(Checkpoint& ckpt, const AdamW<float>& opt);
void checkpoint_restore_optimizer(const Checkpoint& ckpt, AdamW<float>& opt);

} // namespace hear
