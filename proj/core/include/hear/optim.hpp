#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hear/common.hpp"
#include "hear/tensor.hpp"

namespace hear {

// Linear warmup to peak over [0, warmup], cosine decay to exactly 0 at total.
struct LrSchedule {
    double peak_rate = 5e-4;
    int64_t warmup_steps = 10000;
    int64_t total_steps = 450000;

    void validate() const {
        if (warmup_steps >= total_steps)
            throw ConfigError("lr schedule: warmup_steps must be < total_steps");
        if (peak_rate <= 0) throw ConfigError("lr schedule: peak rate must be positive");
    }
};

inline double lr_at(const LrSchedule& s, int64_t step, bool* clamped = nullptr) {
    s.validate();
    if (clamped) *clamped = false;
    if (step < 0) throw ConfigError("lr_at: negative step");
    if (step > s.total_steps) {
        if (clamped) *clamped = true;
        return 0.0;
    }
    if (step <= s.warmup_steps)
        return s.peak_rate * double(step) / double(s.warmup_steps);
    const double u = double(step - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
    return s.peak_rate * 0.5 * (1.0 + std::cos(3.141592653589793 * u));
}

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias correction. Moment buffers are kept
// per parameter name at the parameter's own precision; update arithmetic runs
// in double and is rounded once on write-back.
template <class S>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    struct Slot {
        Tensor<S> m;
        Tensor<S> v;
    };

    int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

    void step(const std::vector<std::pair<std::string, Tensor<S>*>>& params,
              const std::vector<const Tensor<S>*>& grads, double lr) {
        if (params.size() != grads.size())
            throw NumericError("adamw: gradient list does not match parameter list");
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor<S>& w = *params[p].second;
            const Tensor<S>& g = *grads[p];
            if (g.size() != w.size())
                throw NumericError("adamw: gradient shape mismatch for " + params[p].first);
            Slot& slot = slots_[params[p].first];
            if (slot.m.size() != w.size()) {
                slot.m = Tensor<S>(w.shape);
                slot.v = Tensor<S>(w.shape);
            }
            for (int64_t i = 0; i < w.size(); ++i) {
                const double gi = double(g[i]);
                if (!std::isfinite(gi))
                    throw NumericError("adamw: non-finite gradient in " + params[p].first +
                                       " at element " + std::to_string(i));
                double m = cfg_.beta1 * double(slot.m[i]) + (1.0 - cfg_.beta1) * gi;
                double v = cfg_.beta2 * double(slot.v[i]) + (1.0 - cfg_.beta2) * gi * gi;
                slot.m[i] = S(m);
                slot.v[i] = S(v);
                const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
                w[i] = S(double(w[i]) - lr * (update + cfg_.weight_decay * double(w[i])));
            }
        }
    }

    // checkpoint access
    std::map<std::string, Slot>& slots() { return slots_; }
    const std::map<std::string, Slot>& slots() const { return slots_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    AdamWConfig cfg_;
    int64_t step_ = 0;
    std::map<std::string, Slot> slots_;
};

} // namespace hear
