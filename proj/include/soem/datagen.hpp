#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "soem/embedding.hpp"
#include "soem/parallel.hpp"

namespace soem {

/// Recipe for a synthetic series: a linear recurrence of order d = phi.size(),
/// an initial window (oldest first), optional Gaussian innovation noise.
struct LRFSpec {
    std::vector<double> phi;
    std::vector<double> initial;
    int length = 0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

inline void validate(const LRFSpec& spec) {
    if (spec.phi.empty())
        throw std::invalid_argument("LRFSpec: recurrence order must be >= 1");
    if (spec.initial.size() != spec.phi.size())
        throw std::invalid_argument("LRFSpec: initial window length " +
                                    std::to_string(spec.initial.size()) +
                                    " != order " + std::to_string(spec.phi.size()));
    if (spec.length <= static_cast<int>(spec.phi.size()))
        throw std::invalid_argument("LRFSpec: length must exceed the order");
    if (!(spec.noise_std >= 0.0))
        throw std::invalid_argument("LRFSpec: noise_std must be nonnegative");
    for (double v : spec.phi)
        if (!std::isfinite(v)) throw std::invalid_argument("LRFSpec: non-finite coefficient");
    for (double v : spec.initial)
        if (!std::isfinite(v)) throw std::invalid_argument("LRFSpec: non-finite initial value");
}

/// Iterates the recurrence y_t = sum_k phi_k y_{t-d+k} + eps_t past the seeded
/// initial window. Unstable recurrences are legitimate inputs, so growth is
/// tolerated up to |y| = 1e12 and aborted beyond it.
[[nodiscard]] inline TimeSeries generate(const LRFSpec& spec, std::string id = "series",
                                         std::optional<std::string> label = {}) {
    validate(spec);
    const auto d = spec.phi.size();
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> eps(0.0, spec.noise_std);

    TimeSeries out{std::move(id), spec.initial, std::move(label)};
    out.values.reserve(spec.length);
    while (out.values.size() < static_cast<std::size_t>(spec.length)) {
        double next = 0.0;
        for (std::size_t k = 0; k < d; ++k)
            next += spec.phi[k] * out.values[out.values.size() - d + k];
        if (spec.noise_std > 0.0) next += eps(rng);
        if (!(std::abs(next) <= 1e12))
            throw std::runtime_error("generate '" + out.id + "': |y| exceeded 1e12 at t=" +
                                     std::to_string(out.values.size()) +
                                     "; recurrence is unstable");
        out.values.push_back(next);
    }
    return out;
}

/// Labeled benchmark: per_group series per LRFSpec, all sharing that entry's
/// recurrence. Members get independently derived noise streams; with
/// randomize_initial their windows are redrawn (Gaussian, scaled to the RMS of
/// the entry's window) so same-dynamics series start out of phase. Labels are
/// the entry's index in `specs`.
[[nodiscard]] inline std::vector<TimeSeries> generate_groups(const std::vector<LRFSpec>& specs,
                                                             int per_group,
                                                             bool randomize_initial,
                                                             std::uint64_t seed) {
    if (specs.empty())
        throw std::invalid_argument("generate_groups: no specs");
    if (per_group < 1)
        throw std::invalid_argument("generate_groups: per_group must be >= 1");

    std::vector<TimeSeries> out;
    out.reserve(specs.size() * static_cast<std::size_t>(per_group));
    for (std::size_t g = 0; g < specs.size(); ++g) {
        validate(specs[g]);
        for (int m = 0; m < per_group; ++m) {
            const std::uint64_t member =
                mix_seed(seed, g * static_cast<std::size_t>(per_group) + m);
            LRFSpec local = specs[g];
            local.seed = mix_seed(member, 2);
            if (randomize_initial) {
                double rms = 0.0;
                for (double v : local.initial) rms += v * v;
                rms = std::sqrt(rms / static_cast<double>(local.initial.size()));
                if (rms <= 0.0) rms = 1.0;
                std::mt19937_64 wrng(mix_seed(member, 1));
                std::normal_distribution<double> draw(0.0, rms);
                for (auto& v : local.initial) v = draw(wrng);
            }
            out.push_back(generate(local, "g" + std::to_string(g) + "_m" + std::to_string(m),
                                   std::to_string(g)));
        }
    }
    return out;
}

/// The three-family benchmark: smooth growth, period-4 alternation, and a
/// slowly damped period-16 oscillation. Distinct lag-space eigenstructures,
/// which is exactly what the map is supposed to tell apart.
[[nodiscard]] inline std::vector<LRFSpec> benchmark_specs(int length, double noise_std) {
    const double rho = 0.995, theta = std::numbers::pi / 8.0;
    return {
        {{1.02}, {1.0}, length, noise_std, 0},
        {{-1.0, 0.0}, {0.0, 1.0}, length, noise_std, 0},
        {{-rho * rho, 2.0 * rho * std::cos(theta)}, {1.0, 0.98}, length, noise_std, 0},
    };
}

}  // namespace soem
