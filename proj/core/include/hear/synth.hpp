#pragma once

#include <cstdint>
#include <string>

#include "hear/manifest.hpp"

namespace hear {

// Deterministic synthetic corpus: tone / chirp / noise-band / harmonic
// families with per-class frequency ranges, durations drawn from
// [min_seconds, max_seconds], 5-fold assignment and an 80/20 train/test
// split. Desk-scale substitute for the large pre-training corpora.
struct SynthSpec {
    int classes = 4;
    int clips_per_class = 50;
    double min_seconds = 1.0;
    double max_seconds = 13.0;
    int sample_rate = 16000;
    uint64_t seed = 42;
    int folds = 5;

    void validate() const {
        if (classes < 2) throw ConfigError("synth: need at least 2 classes");
        if (clips_per_class < 1) throw ConfigError("synth: need at least 1 clip per class");
        if (min_seconds < 1.0) throw ConfigError("synth: clips must be at least 1 s");
        if (max_seconds < min_seconds) throw ConfigError("synth: max_seconds < min_seconds");
        if (folds < 1) throw ConfigError("synth: folds must be >= 1");
    }
};

// writes WAVs + manifest.csv under out_dir, returns the manifest
DatasetManifest synth_corpus(const SynthSpec& spec, const std::string& out_dir);

} // namespace hear
