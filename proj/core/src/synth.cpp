#include "hear/synth.hpp"

#include <cmath>
#include <filesystem>

#include "hear/frontend.hpp"
#include "hear/rng.hpp"

namespace hear {

namespace {

constexpr double kTwoPi = 6.283185307179586;

enum class Family { tone, chirp, noise_band, harmonic };

// per-class frequency band: spread classes log-uniformly over [150, 3500] Hz
std::pair<double, double> class_band(int cls, int classes) {
    const double lo = 150.0, hi = 3500.0;
    const double a = std::log(lo), b = std::log(hi);
    const double f0 = std::exp(a + (b - a) * cls / classes);
    const double f1 = std::exp(a + (b - a) * (cls + 1) / classes);
    return {f0, f1};
}

Waveform synth_clip(const SynthSpec& spec, int cls, int clip) {
    Rng rng(spec.seed, "synth", (uint64_t(cls) << 20) + uint64_t(clip));
    const double dur = spec.min_seconds + (spec.max_seconds - spec.min_seconds) * rng.uniform();
    const auto [f_lo, f_hi] = class_band(cls, spec.classes);
    const Family family = static_cast<Family>(cls % 4);

    Waveform w;
    w.sample_rate = spec.sample_rate;
    const int n = static_cast<int>(dur * spec.sample_rate);
    w.samples.assign(static_cast<size_t>(n), 0.0);

    const double f0 = f_lo + (f_hi - f_lo) * rng.uniform();
    const double phase0 = kTwoPi * rng.uniform();
    switch (family) {
        case Family::tone:
            for (int i = 0; i < n; ++i)
                w.samples[size_t(i)] = 0.4 * std::sin(phase0 + kTwoPi * f0 * i / spec.sample_rate);
            break;
        case Family::chirp: {
            const double f1 = f_lo + (f_hi - f_lo) * rng.uniform();
            for (int i = 0; i < n; ++i) {
                const double t = double(i) / spec.sample_rate;
                const double f = f0 + (f1 - f0) * t / dur;
                w.samples[size_t(i)] = 0.4 * std::sin(phase0 + kTwoPi * (f0 * t + 0.5 * (f - f0) * t));
            }
            break;
        }
        case Family::noise_band: {
            // band-limited noise as a sum of random in-band sinusoids
            const int partials = 40;
            for (int p = 0; p < partials; ++p) {
                const double f = f_lo + (f_hi - f_lo) * rng.uniform();
                const double ph = kTwoPi * rng.uniform();
                const double amp = 0.4 / std::sqrt(double(partials));
                for (int i = 0; i < n; ++i)
                    w.samples[size_t(i)] += amp * std::sin(ph + kTwoPi * f * i / spec.sample_rate);
            }
            break;
        }
        case Family::harmonic:
            for (int h = 1; h <= 3; ++h) {
                const double amp = 0.35 / h;
                for (int i = 0; i < n; ++i)
                    w.samples[size_t(i)] +=
                        amp * std::sin(h * (phase0 + kTwoPi * f0 * i / spec.sample_rate));
            }
            break;
    }
    // mild broadband noise so instance statistics stay non-degenerate
    for (double& s : w.samples) s += 0.01 * (2.0 * rng.uniform() - 1.0);
    return w;
}

} // namespace

DatasetManifest synth_corpus(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    // manifest rows are written relative to the manifest so the corpus can
    // be moved or regenerated anywhere with identical bytes
    DatasetManifest m;
    m.has_folds = spec.folds > 1;
    m.num_classes = spec.classes;
    const int train_per_class = (spec.clips_per_class * 4 + 4) / 5; // 80/20
    for (int cls = 0; cls < spec.classes; ++cls) {
        const fs::path cls_dir = fs::path(out_dir) / ("class" + std::to_string(cls));
        fs::create_directories(cls_dir);
        for (int clip = 0; clip < spec.clips_per_class; ++clip) {
            const Waveform w = synth_clip(spec, cls, clip);
            const std::string rel = "class" + std::to_string(cls) + "/clip" +
                                    std::to_string(clip) + ".wav";
            save_wav((fs::path(out_dir) / rel).string(), w);
            ManifestRow row;
            row.path = rel;
            row.label = cls;
            row.split = clip < train_per_class ? "train" : "test";
            row.fold = m.has_folds ? clip % spec.folds + 1 : 0;
            m.rows.push_back(std::move(row));
        }
    }
    save_manifest((fs::path(out_dir) / "manifest.csv").string(), m);
    for (auto& row : m.rows) row.path = (fs::path(out_dir) / row.path).string();
    return m;
}

} // namespace hear
