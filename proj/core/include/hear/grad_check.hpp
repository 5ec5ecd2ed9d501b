#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hear/rng.hpp"
#include "hear/tape.hpp"

namespace hear {

// Central-difference gradient verification. Runs at f64 regardless of the
// training precision; coordinates are subsampled (cap per parameter group)
// to bound runtime on large groups.
struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    int64_t worst_coord = -1;
    int64_t coords_checked = 0;
};

// Builds the scalar loss on the given tape from staged parameter leaves
// (one id per parameter, in the same order they were supplied).
using LossBuilder =
    std::function<Tape<double>::Id(Tape<double>&, const std::vector<Tape<double>::Id>&)>;

inline double eval_loss(const LossBuilder& build, const std::vector<Tensor<double>>& params) {
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(tape.leaf(p, false));
    return tape.value(build(tape, ids))[0];
}

inline GradCheckReport grad_check(const LossBuilder& build, std::vector<Tensor<double>> params,
                                  const std::vector<std::string>& names = {}, double eps = 1e-4,
                                  int max_coords_per_param = 512, uint64_t seed = 0x5eed) {
    if (eps < 1e-6 || eps > 1e-3) throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");

    // analytic pass
    Tape<double> tape;
    std::vector<Tape<double>::Id> ids;
    for (const auto& p : params) ids.push_back(tape.leaf(p, true));
    const auto root = build(tape, ids);
    tape.backward(root);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size());
    for (auto id : ids) analytic.push_back(tape.grad(id));

    GradCheckReport report;
    for (size_t p = 0; p < params.size(); ++p) {
        const std::string name = p < names.size() ? names[p] : "param" + std::to_string(p);
        const int64_t n = params[p].size();
        std::vector<int> coords;
        if (n <= max_coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = static_cast<int>(i);
        } else {
            Rng rng(seed, "gradcheck", p);
            coords = rng.sample_without_replacement(static_cast<int>(n), max_coords_per_param);
        }
        for (int c : coords) {
            const double saved = params[p][c];
            auto eval_at = [&](double delta) {
                params[p][c] = saved + delta;
                const double f = eval_loss(build, params);
                if (!std::isfinite(f))
                    throw NumericError("grad_check: loss non-finite when perturbing " + name +
                                       " coordinate " + std::to_string(c));
                return f;
            };
            // fourth-order central difference: the f''' truncation term of the
            // two-point stencil dominates on deep layer-normalized toys
            const double f_p1 = eval_at(eps);
            const double f_m1 = eval_at(-eps);
            const double f_p2 = eval_at(2.0 * eps);
            const double f_m2 = eval_at(-2.0 * eps);
            params[p][c] = saved;
            const double numeric =
                (8.0 * (f_p1 - f_m1) - (f_p2 - f_m2)) / (12.0 * eps);
            const double an = analytic[p][c];
            const double denom = std::max({std::fabs(an), std::fabs(numeric), 1e-12});
            const double rel = std::fabs(an - numeric) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_coord = c;
            }
        }
    }
    return report;
}

} // namespace hear
