#include "hear/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace hear {

namespace {

uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return uint16_t(b[0]) | uint16_t(b[1]) << 8;
}

void write_u32(std::ostream& out, uint32_t v) {
    const char b[4] = {char(v & 0xff), char(v >> 8 & 0xff), char(v >> 16 & 0xff), char(v >> 24 & 0xff)};
    out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
    const char b[2] = {char(v & 0xff), char(v >> 8 & 0xff)};
    out.write(b, 2);
}

} // namespace

Waveform load_wav(const std::string& path, int target_rate) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("wav: cannot open " + path);

    char tag[5] = {0};
    in.read(tag, 4);
    if (std::strncmp(tag, "RIFF", 4) != 0) throw DataError("wav: not a RIFF file: " + path);
    read_u32(in);
    in.read(tag, 4);
    if (std::strncmp(tag, "WAVE", 4) != 0) throw DataError("wav: not a WAVE file: " + path);

    uint16_t format = 0, channels = 0, bits = 0;
    uint32_t rate = 0;
    std::vector<int16_t> pcm;
    bool have_fmt = false, have_data = false;
    while (in.read(tag, 4)) {
        const uint32_t size = read_u32(in);
        if (std::strncmp(tag, "fmt ", 4) == 0) {
            format = read_u16(in);
            channels = read_u16(in);
            rate = read_u32(in);
            read_u32(in); // byte rate
            read_u16(in); // block align
            bits = read_u16(in);
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::strncmp(tag, "data", 4) == 0) {
            pcm.resize(size / 2);
            in.read(reinterpret_cast<char*>(pcm.data()), static_cast<std::streamsize>(size / 2 * 2));
            have_data = true;
        } else {
            in.seekg(size + (size & 1), std::ios::cur);
        }
    }
    if (!have_fmt || !have_data) throw DataError("wav: missing fmt/data chunk in " + path);
    if (format != 1 || bits != 16) throw DataError("wav: only 16-bit PCM supported: " + path);
    if (channels < 1) throw DataError("wav: zero channels in " + path);
    if (pcm.empty()) throw DataError("wav: zero-length audio in " + path);

    Waveform w;
    w.sample_rate = static_cast<int>(rate);
    const size_t frames = pcm.size() / channels;
    w.samples.resize(frames);
    for (size_t f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (uint16_t c = 0; c < channels; ++c) acc += pcm[f * channels + c] / 32768.0;
        w.samples[f] = acc / channels;
    }
    if (w.sample_rate != target_rate) w = resample(w, target_rate);
    return w;
}

void save_wav(const std::string& path, const Waveform& w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("wav: cannot write " + path);
    const uint32_t n = static_cast<uint32_t>(w.samples.size());
    out.write("RIFF", 4);
    write_u32(out, 36 + n * 2);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_u32(out, 16);
    write_u16(out, 1); // PCM
    write_u16(out, 1); // mono
    write_u32(out, static_cast<uint32_t>(w.sample_rate));
    write_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);
    write_u16(out, 2);
    write_u16(out, 16);
    out.write("data", 4);
    write_u32(out, n * 2);
    for (double s : w.samples) {
        const double clipped = std::clamp(s, -1.0, 1.0);
        const int16_t v = static_cast<int16_t>(std::lrint(clipped * 32767.0));
        write_u16(out, static_cast<uint16_t>(v));
    }
    if (!out) throw DataError("wav: write failed for " + path);
}

// Polyphase rational resampler. The prototype lowpass is a Hann-windowed
// sinc cut at pi/max(up,down) on the upsampled grid; the symmetric FIR makes
// it linear-phase.
std::vector<double> resample_rational(const std::vector<double>& x, int up, int down) {
    if (up <= 0 || down <= 0) throw ConfigError("resample: factors must be positive");
    if (up == down) return x;
    const int m = std::max(up, down);
    const int half = 12 * m; // 12 sinc zero crossings per side
    const auto h = [&](int64_t n) -> double {
        if (n < -half || n > half) return 0.0;
        const double t = double(n) / m;
        const double sinc = n == 0 ? 1.0 : std::sin(3.141592653589793 * t) / (3.141592653589793 * t);
        const double win = 0.5 + 0.5 * std::cos(3.141592653589793 * double(n) / (half + 1));
        return sinc * win / m;
    };
    const int64_t in_len = static_cast<int64_t>(x.size());
    const int64_t out_len = (in_len * up + down - 1) / down;
    std::vector<double> y(static_cast<size_t>(out_len), 0.0);
    for (int64_t j = 0; j < out_len; ++j) {
        const int64_t t = j * down; // position on the upsampled grid
        const int64_t i_lo = std::max<int64_t>(0, (t - half + up - 1) / up);
        const int64_t i_hi = std::min<int64_t>(in_len - 1, (t + half) / up);
        double acc = 0.0;
        for (int64_t i = i_lo; i <= i_hi; ++i) acc += x[static_cast<size_t>(i)] * h(t - i * up);
        y[static_cast<size_t>(j)] = acc * up;
    }
    return y;
}

Waveform resample(const Waveform& w, int target_rate) {
    if (w.sample_rate == target_rate) return w;
    const int g = static_cast<int>(std::gcd(w.sample_rate, target_rate));
    Waveform out;
    out.sample_rate = target_rate;
    out.samples = resample_rational(w.samples, target_rate / g, w.sample_rate / g);
    return out;
}

} // namespace hear
