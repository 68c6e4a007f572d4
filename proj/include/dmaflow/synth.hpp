#pragma once

#include <cstdint>

#include "dmaflow/mat.hpp"
#include "dmaflow/series.hpp"

namespace dmaflow::synth {

enum class Nonlinearity { kNone, kRegimeSwitch };

std::string to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(const std::string& s);  // throws InvalidConfig

// Generator configuration. Zone v is driven by a mix of shared latent demand
// factors (columns of latent_weights) so cross-zone correlation is controlled
// by how much loading two zones share.
struct ScenarioConfig {
    int n_zones = 5;
    double months = 3.0;  // 30-day months
    std::int64_t step_seconds = 300;
    Mat latent_weights;  // n_zones x n_factors
    Vec noise_sigma;     // per zone, >= 0
    Vec base_scale;      // per zone, > 0 (mean demand level)
    Nonlinearity nonlinearity = Nonlinearity::kRegimeSwitch;
    std::uint64_t seed = 42;

    std::int64_t steps() const;
    void validate() const;  // throws InvalidConfig
};

// round(months * 30 * 24 * 3600 / step_seconds)
std::int64_t months_to_steps(double months, std::int64_t step_seconds);

// Deterministic: identical config -> bitwise-identical panel. Each zone is
//   base_scale_v * s(t) * (sum_l w[v][l] * f_l(t)) + gaussian noise,
// clipped at zero, where s(t) is a shared daily double-peak profile plus a
// weekday/weekend level term and the f_l are smooth positive AR factors.
// With kRegimeSwitch the first factor also carries occasional persistent
// demand-level shifts.
FlowPanel generate(const ScenarioConfig& config);

// The frozen benchmark scenario: five zones where zone 5 shares its demand
// factors with zones 1, 3 and 4 but not with zone 2. Correlations of zone 5
// against 1/3/4 land above 0.9 and against 2 well below it.
ScenarioConfig default_scenario();

}  // namespace dmaflow::synth
