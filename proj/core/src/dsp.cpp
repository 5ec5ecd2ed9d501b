#include "hear/frontend.hpp"

#include <algorithm>
#include <cmath>

#include "hear/flops_meter.hpp"

namespace hear {

namespace {

constexpr double kPi = 3.141592653589793;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// triangular filterbank on the HTK mel scale, [n_mels x bins]
Tensord mel_filterbank(const FrontendConfig& cfg) {
    const int bins = cfg.spectrum_bins();
    const double f_max = cfg.sample_rate / 2.0;
    const double mel_max = hz_to_mel(f_max);
    std::vector<double> centers(static_cast<size_t>(cfg.n_mels) + 2);
    for (size_t i = 0; i < centers.size(); ++i)
        centers[i] = mel_to_hz(mel_max * double(i) / double(cfg.n_mels + 1));
    Tensord bank({cfg.n_mels, bins});
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = centers[static_cast<size_t>(m)];
        const double mid = centers[static_cast<size_t>(m) + 1];
        const double hi = centers[static_cast<size_t>(m) + 2];
        for (int b = 0; b < bins; ++b) {
            const double f = double(b) * cfg.sample_rate / cfg.n_fft;
            double v = 0.0;
            if (f > lo && f < mid)
                v = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                v = (hi - f) / (hi - mid);
            bank.at(m, b) = v;
        }
    }
    return bank;
}

// periodic Hann
std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
    return w;
}

// power spectrum frames |STFT|^2, [frames x bins]
Tensord stft_power(const Waveform& w, const FrontendConfig& cfg) {
    cfg.validate();
    const int win = cfg.window_samples();
    const int hop = cfg.hop_samples();
    const int64_t len = static_cast<int64_t>(w.samples.size());
    if (len < win)
        throw DataError("stft: waveform shorter than one analysis window (" +
                        std::to_string(len) + " < " + std::to_string(win) + " samples)");
    const int frames = static_cast<int>((len + hop - 1) / hop); // ceil(len/hop), tail zero-padded
    const int bins = cfg.spectrum_bins();
    const auto window = hann_window(win);

    Tensord out({frames, bins});
    std::vector<double> re(static_cast<size_t>(cfg.n_fft));
    std::vector<double> im(static_cast<size_t>(cfg.n_fft));
    for (int f = 0; f < frames; ++f) {
        const int64_t start = static_cast<int64_t>(f) * hop;
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        for (int i = 0; i < win; ++i) {
            const int64_t s = start + i;
            re[static_cast<size_t>(i)] =
                s < len ? w.samples[static_cast<size_t>(s)] * window[static_cast<size_t>(i)] : 0.0;
        }
        fft_radix2(re, im);
        for (int b = 0; b < bins; ++b)
            out.at(f, b) = re[static_cast<size_t>(b)] * re[static_cast<size_t>(b)] +
                           im[static_cast<size_t>(b)] * im[static_cast<size_t>(b)];
    }
    // documented frontend convention: window + 5 n log2 n per FFT + |.|^2
    const int64_t fft_cost = 5LL * cfg.n_fft * static_cast<int64_t>(std::log2(cfg.n_fft));
    charge_flops(static_cast<int64_t>(frames) * (win + fft_cost + 3LL * bins));
    return out;
}

} // namespace

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
    const size_t n = re.size();
    if (!is_pow2(static_cast<int>(n))) throw ConfigError("fft: size must be a power of two");
    // bit reversal
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t half = 1; half < n; half <<= 1) {
        const double theta = -kPi / double(half);
        const double wr = std::cos(theta), wi = std::sin(theta);
        for (size_t start = 0; start < n; start += half * 2) {
            double cr = 1.0, ci = 0.0;
            for (size_t k = 0; k < half; ++k) {
                const size_t a = start + k, b = start + k + half;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

int FrontendConfig::chunk_tokens() const {
    const double t = chunk_seconds * tokens_per_second();
    const int n = static_cast<int>(t + 0.5);
    return n;
}

int FrontendConfig::overlap_tokens() const {
    const double t = overlap_seconds * tokens_per_second();
    return static_cast<int>(t + 0.5);
}

void FrontendConfig::validate() const {
    if (sample_rate <= 0) throw ConfigError("frontend: sample_rate must be positive");
    if (!is_pow2(n_fft)) throw ConfigError("frontend: n_fft must be a power of two");
    if (window_samples() > n_fft) throw ConfigError("frontend: window longer than n_fft");
    if (window_samples() <= 0 || hop_samples() <= 0)
        throw ConfigError("frontend: window/hop must be positive");
    if (n_mels < 2) throw ConfigError("frontend: n_mels must be >= 2");
    if (chunk_seconds <= 0 || overlap_seconds < 0 || overlap_seconds >= chunk_seconds)
        throw ConfigError("frontend: need 0 <= overlap < chunk");
    const double ct = chunk_seconds * tokens_per_second();
    if (std::fabs(ct - std::round(ct)) > 1e-9)
        throw ConfigError("frontend: chunk_seconds must map to a whole token count");
    const double ot = overlap_seconds * tokens_per_second();
    if (std::fabs(ot - std::round(ot)) > 1e-9)
        throw ConfigError("frontend: overlap_seconds must map to a whole token count");
}

MelFrameSequence compute_logmel(const Waveform& w, const FrontendConfig& cfg) {
    const Tensord power = stft_power(w, cfg);
    const Tensord bank = mel_filterbank(cfg);
    const int frames = power.rows();
    const int bins = power.cols();
    MelFrameSequence out;
    out.frame_rate = cfg.frame_rate();
    out.frames = Tensord({frames, cfg.n_mels});
    for (int f = 0; f < frames; ++f)
        for (int m = 0; m < cfg.n_mels; ++m) {
            double acc = 0.0;
            for (int b = 0; b < bins; ++b) acc += bank.at(m, b) * power.at(f, b);
            out.frames.at(f, m) = std::log(acc + cfg.mel_floor);
        }
    charge_flops(2LL * frames * cfg.n_mels * bins + 2LL * frames * cfg.n_mels);
    return out;
}

namespace {
// compensated summation keeps the constant-input case exactly constant
double kahan_sum(const std::vector<double>& xs, double shift = 0.0) {
    double sum = 0.0, comp = 0.0;
    for (double x : xs) {
        const double y = (x - shift) - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return sum;
}
} // namespace

Tensord instance_normalize_matrix(const Tensord& m) {
    if (m.size() < 2) throw DataError("instance_normalize: need at least 2 elements");
    const double mu = kahan_sum(m.data) / double(m.size());
    double var = 0.0, comp = 0.0;
    for (double v : m.data) {
        const double d = (v - mu) * (v - mu) - comp;
        const double t = var + d;
        comp = (t - var) - d;
        var = t;
    }
    var /= double(m.size());
    const double sd = std::sqrt(std::max(var, 0.0));
    Tensord out = m;
    charge_flops(5LL * m.size());
    if (sd <= 1e-10) { // zero-variance guard: constant instances map to zeros
        std::fill(out.data.begin(), out.data.end(), 0.0);
        return out;
    }
    for (double& v : out.data) v = (v - mu) / sd;
    return out;
}

MelFrameSequence instance_normalize(const MelFrameSequence& m) {
    return {instance_normalize_matrix(m.frames), m.frame_rate};
}

PatchSequence patchify(const MelFrameSequence& m) {
    const int frames = m.frames.rows();
    if (frames < 2) throw DataError("patchify: need at least 2 frames");
    const int n = frames / 2;
    const int width = m.frames.cols();
    PatchSequence out;
    out.time_per_token = 2.0 / m.frame_rate;
    out.tokens = Tensord({n, 2 * width});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < width; ++c) {
            out.tokens.at(i, c) = m.frames.at(2 * i, c);
            out.tokens.at(i, width + c) = m.frames.at(2 * i + 1, c);
        }
    return out;
}

PowerSpectrumSequence compute_power_spectrum(const Waveform& w, const FrontendConfig& cfg) {
    Tensord logp = stft_power(w, cfg);
    for (double& v : logp.data) v = std::log(v + cfg.mel_floor);
    charge_flops(2LL * logp.size());
    logp = instance_normalize_matrix(logp);
    const int n = logp.rows() / 2;
    if (n < 1) throw DataError("power spectrum: need at least 2 frames");
    Tensord pooled({n, logp.cols()});
    for (int i = 0; i < n; ++i)
        for (int b = 0; b < logp.cols(); ++b)
            pooled.at(i, b) = 0.5 * (logp.at(2 * i, b) + logp.at(2 * i + 1, b));
    charge_flops(2LL * pooled.size());
    return {std::move(pooled)};
}

ChunkLayout layout_chunks(int n_tokens, ChunkMode mode, const FrontendConfig& cfg) {
    if (n_tokens < 1) throw DataError("layout_chunks: need at least one token");
    ChunkLayout layout;
    layout.chunk_tokens = cfg.chunk_tokens();
    layout.overlap_tokens = cfg.overlap_tokens();
    layout.mode = mode;
    const int chunk = layout.chunk_tokens;
    if (mode == ChunkMode::pretrain) {
        // non-overlapping <=6 s blocks; final block dropped when under 1 s
        const int min_tokens = static_cast<int>(cfg.tokens_per_second() + 0.5);
        for (int s = 0; s < n_tokens; s += chunk) {
            const int e = std::min(s + chunk, n_tokens);
            if (e - s >= min_tokens) layout.windows.push_back({s, e});
        }
    } else {
        // sliding window, stride = chunk - overlap, short final window kept
        const int stride = chunk - layout.overlap_tokens;
        int s = 0;
        for (;;) {
            const int e = std::min(s + chunk, n_tokens);
            layout.windows.push_back({s, e});
            if (e >= n_tokens) break;
            s += stride;
        }
    }
    return layout;
}

FrontendOutput run_frontend(const Waveform& w, const FrontendConfig& cfg) {
    PhaseScope phase(FlopPhase::frontend);
    FrontendOutput out;
    out.patches = patchify(instance_normalize(compute_logmel(w, cfg)));
    out.spectrum = compute_power_spectrum(w, cfg);
    if (out.spectrum.count() != out.patches.count())
        throw NumericError("frontend: spectrum/patch token counts diverged");
    return out;
}

} // namespace hear
