#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hear/common.hpp"
#include "hear/tensor.hpp"

namespace hear {

// STFT/mel parameters. 16 kHz audio, 6 s chunks and the 1 s inference
// overlap are fixed by the architecture; window/hop/fft/mel counts are
// defaults and stay configurable.
struct FrontendConfig {
    int sample_rate = 16000;
    double window_ms = 25.0;
    double hop_ms = 10.0;
    int n_fft = 512;
    int n_mels = 128;
    double mel_floor = 1e-10;
    double chunk_seconds = 6.0;
    double overlap_seconds = 1.0;

    int window_samples() const { return static_cast<int>(window_ms * sample_rate / 1000.0 + 0.5); }
    int hop_samples() const { return static_cast<int>(hop_ms * sample_rate / 1000.0 + 0.5); }
    int spectrum_bins() const { return n_fft / 2 + 1; }
    int patch_width() const { return 2 * n_mels; }
    double frame_rate() const { return double(sample_rate) / hop_samples(); }
    double tokens_per_second() const { return frame_rate() / 2.0; }
    int chunk_tokens() const;
    int overlap_tokens() const;
    void validate() const;
};

struct Waveform {
    std::vector<double> samples;
    int sample_rate = 16000;
    double seconds() const { return double(samples.size()) / sample_rate; }
};

struct MelFrameSequence {
    Tensord frames; // [T, n_mels]
    double frame_rate = 100.0;
};

// Two consecutive mel frames concatenated per token (kernel 2, stride 2
// along time); instance-normalized upstream.
struct PatchSequence {
    Tensord tokens; // [N, 2*n_mels]
    double time_per_token = 0.02;
    int count() const { return tokens.rows(); }
};

// z-normed log-power spectrum, pooled in frame pairs so row t aligns with
// patch token t.
struct PowerSpectrumSequence {
    Tensord values; // [N, n_fft/2+1]
    int count() const { return values.rows(); }
};

enum class ChunkMode { pretrain, inference };

struct ChunkLayout {
    struct Window {
        int begin = 0; // token indices, [begin, end)
        int end = 0;
        int length() const { return end - begin; }
    };
    std::vector<Window> windows;
    int chunk_tokens = 0;
    int overlap_tokens = 0;
    ChunkMode mode = ChunkMode::inference;
};

// --- audio ingestion (16-bit PCM WAV; stereo downmixed, non-16k resampled) ---

Waveform load_wav(const std::string& path, int target_rate = 16000);
void save_wav(const std::string& path, const Waveform& w);

// Linear-phase polyphase rational resampler (windowed-sinc prototype).
std::vector<double> resample_rational(const std::vector<double>& x, int up, int down);
Waveform resample(const Waveform& w, int target_rate);

// --- spectral features ---

// log(mel(|STFT|^2) + floor); frames = ceil(len/hop) with zero-padded tail
MelFrameSequence compute_logmel(const Waveform& w, const FrontendConfig& cfg);

// z-normalization over all elements of one instance; constant input -> zeros
Tensord instance_normalize_matrix(const Tensord& m);
MelFrameSequence instance_normalize(const MelFrameSequence& m);

// token i = concat(frame 2i, frame 2i+1); trailing odd frame dropped
PatchSequence patchify(const MelFrameSequence& m);

// log-power STFT on the same grid, z-normed, then mean-pooled in frame pairs
PowerSpectrumSequence compute_power_spectrum(const Waveform& w, const FrontendConfig& cfg);

ChunkLayout layout_chunks(int n_tokens, ChunkMode mode, const FrontendConfig& cfg);

struct FrontendOutput {
    PatchSequence patches;
    PowerSpectrumSequence spectrum;
};

// normalized log-mel -> patches plus the aligned gated-fusion spectrum
FrontendOutput run_frontend(const Waveform& w, const FrontendConfig& cfg);

// in-place iterative radix-2 FFT; n must be a power of two
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

} // namespace hear
