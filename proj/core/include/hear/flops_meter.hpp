#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace hear {

// FLOPs accounting convention, shared by the runtime counter and the
// analytic estimator. One multiply-add counts as 2 FLOPs; per-element
// costs of the remaining kernels are fixed here and documented in the
// profiler report.
namespace flops_cost {
inline constexpr int64_t kMulAdd = 2;
inline constexpr int64_t kAdd = 1;          // plain add / sub / residual
inline constexpr int64_t kMul = 1;          // plain scale / hadamard
inline constexpr int64_t kSigmoid = 4;
inline constexpr int64_t kGelu = 14;        // erf-based
inline constexpr int64_t kSoftmax = 5;      // per element, max/sub/exp/sum/div amortized
inline constexpr int64_t kLayerNorm = 8;    // per element, two passes + affine
inline constexpr int64_t kSquare = 1;
inline constexpr int64_t kPoolMean = 1;     // per element
inline constexpr int64_t kPoolStd = 4;      // per element
inline constexpr int64_t kPoolMax = 1;      // per element (compare)
inline constexpr int64_t kCrossfade = 3;    // per element: sub, mul, add
inline constexpr int64_t kCrossfadeWeight = 8; // per overlap position: cosine ramp
} // namespace flops_cost

enum class FlopPhase : int {
    embedding = 0,
    attention_linear,
    attention_quadratic,
    ffn,
    gating,
    task,
    head,
    frontend,
    other,
    count_
};

inline constexpr std::array<std::string_view, static_cast<size_t>(FlopPhase::count_)>
    kFlopPhaseNames = {"embedding",  "attention_linear", "attention_quadratic",
                       "ffn",        "gating",           "task",
                       "head",       "frontend",         "other"};

// Per-phase FLOPs tally. Installed thread-locally; tensor op kernels charge
// their forward cost to the active phase while a meter is installed.
class FlopMeter {
public:
    FlopMeter() { totals_.fill(0); }

    void add(int64_t flops) { totals_[static_cast<size_t>(phase_)] += flops; }
    void set_phase(FlopPhase p) { phase_ = p; }
    FlopPhase phase() const { return phase_; }

    int64_t total() const {
        int64_t t = 0;
        for (int64_t v : totals_) t += v;
        return t;
    }
    int64_t at(FlopPhase p) const { return totals_[static_cast<size_t>(p)]; }

    static FlopMeter*& active() {
        thread_local FlopMeter* meter = nullptr;
        return meter;
    }

private:
    std::array<int64_t, static_cast<size_t>(FlopPhase::count_)> totals_{};
    FlopPhase phase_ = FlopPhase::other;
};

// RAII installer
class MeterScope {
public:
    explicit MeterScope(FlopMeter& m) : prev_(FlopMeter::active()) { FlopMeter::active() = &m; }
    ~MeterScope() { FlopMeter::active() = prev_; }

private:
    FlopMeter* prev_;
};

class PhaseScope {
public:
    explicit PhaseScope(FlopPhase p) {
        if (FlopMeter* m = FlopMeter::active()) {
            prev_ = m->phase();
            m->set_phase(p);
            armed_ = true;
        }
    }
    ~PhaseScope() {
        if (armed_) FlopMeter::active()->set_phase(prev_);
    }

private:
    FlopPhase prev_ = FlopPhase::other;
    bool armed_ = false;
};

inline void charge_flops(int64_t flops) {
    if (FlopMeter* m = FlopMeter::active()) m->add(flops);
}

} // namespace hear
