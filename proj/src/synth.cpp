#include "dmaflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dmaflow/errors.hpp"
#include "dmaflow/rng.hpp"

namespace dmaflow::synth {

namespace {

// Fixed shape parameters of the generator. These are part of the frozen data
// definition, not user knobs; zone-level structure is configured through
// latent_weights / base_scale / noise_sigma instead.
constexpr double kMorningCenter = 0.2917;  // ~07:00
constexpr double kMorningWidth = 0.040;
constexpr double kMorningAmp = 0.65;
constexpr double kEveningCenter = 0.88;  // ~21:00
constexpr double kEveningWidth = 0.050;
constexpr double kEveningAmp = 0.45;
constexpr double kNightCenter = 0.135;  // ~03:15
constexpr double kNightWidth = 0.110;
constexpr double kNightDepth = 0.45;
constexpr double kWeekendLift = 0.10;
constexpr double kWeekdayDip = -0.04;

constexpr double kDemandTauDays = 0.75;  // AR(1) time constant of factor 0
constexpr double kDemandSd = 0.28;
constexpr double kSecondTauDays = 1.25;  // factor 1
constexpr double kSecondSd = 0.30;
constexpr double kOscPeriodSteps = 10.0;  // factor 2: pseudo-periodic AR(2)
constexpr double kOscPoleRadius = 0.99;
constexpr double kOscSd = 0.20;
constexpr double kFactorFloor = 0.05;

constexpr double kRegimeLow = 0.78;
constexpr double kRegimeHigh = 1.25;
constexpr double kRegimeMeanDwellDays = 1.75;

constexpr std::int64_t kBurnInDays = 5;

double wrapped_dist(double u, double center) {
    double d = std::fabs(u - center);
    return std::min(d, 1.0 - d);
}

double bump(double u, double center, double width) {
    const double d = wrapped_dist(u, center);
    return std::exp(-0.5 * d * d / (width * width));
}

// Daily double-peak profile plus weekday/weekend level, evaluated from the
// step index. Day 0 is a Monday (panels start at kDefaultStartEpoch).
double seasonal(std::int64_t t, std::int64_t steps_per_day) {
    const double u = static_cast<double>(t % steps_per_day) / static_cast<double>(steps_per_day);
    const std::int64_t day = (t / steps_per_day) % 7;
    const bool weekend = day >= 5;
    double s = 1.0 + kMorningAmp * bump(u, kMorningCenter, kMorningWidth) +
               kEveningAmp * bump(u, kEveningCenter, kEveningWidth) -
               kNightDepth * bump(u, kNightCenter, kNightWidth);
    s += weekend ? kWeekendLift : kWeekdayDip;
    return s;
}

// Smooth positive AR(1) factor: 1 + y with y mean-reverting, floored.
Vec ar1_factor(std::int64_t n, std::int64_t burn, double tau_days, double sd,
               std::int64_t steps_per_day, Rng& rng) {
    const double rho = std::exp(-1.0 / (tau_days * static_cast<double>(steps_per_day)));
    const double innov = sd * std::sqrt(1.0 - rho * rho);
    Vec out(static_cast<std::size_t>(n));
    double y = rng.gaussian(0.0, sd);
    for (std::int64_t t = -burn; t < n; ++t) {
        y = rho * y + innov * rng.gaussian();
        if (t >= 0) out[static_cast<std::size_t>(t)] = std::max(kFactorFloor, 1.0 + y);
    }
    return out;
}

// Pseudo-periodic AR(2) factor (complex poles at radius r, period P steps).
Vec ar2_factor(std::int64_t n, std::int64_t burn, double period, double radius, double sd,
               Rng& rng) {
    const double omega = 2.0 * std::numbers::pi / period;
    const double a1 = 2.0 * radius * std::cos(omega);
    const double a2 = -radius * radius;
    // Stationary variance of an AR(2): var = s2*(1-a2) / ((1+a2)((1-a2)^2-a1^2)).
    const double denom = (1.0 + a2) * ((1.0 - a2) * (1.0 - a2) - a1 * a1);
    const double innov = sd * std::sqrt(denom / (1.0 - a2));
    Vec out(static_cast<std::size_t>(n));
    double y1 = 0.0, y2 = 0.0;
    for (std::int64_t t = -burn; t < n; ++t) {
        const double y = a1 * y1 + a2 * y2 + innov * rng.gaussian();
        y2 = y1;
        y1 = y;
        if (t >= 0) out[static_cast<std::size_t>(t)] = std::max(kFactorFloor, 1.0 + y);
    }
    return out;
}

// Two-level regime multiplier with geometric dwell times.
Vec regime_path(std::int64_t n, std::int64_t burn, std::int64_t steps_per_day, Rng& rng) {
    const double p_switch = 1.0 / (kRegimeMeanDwellDays * static_cast<double>(steps_per_day));
    Vec out(static_cast<std::size_t>(n));
    bool high = rng.uniform01() < 0.5;
    for (std::int64_t t = -burn; t < n; ++t) {
        if (rng.uniform01() < p_switch) high = !high;
        if (t >= 0) out[static_cast<std::size_t>(t)] = high ? kRegimeHigh : kRegimeLow;
    }
    return out;
}

}  // namespace

std::string to_string(Nonlinearity n) {
    return n == Nonlinearity::kNone ? "none" : "regime_switch";
}

Nonlinearity parse_nonlinearity(const std::string& s) {
    if (s == "none") return Nonlinearity::kNone;
    if (s == "regime_switch") return Nonlinearity::kRegimeSwitch;
    throw InvalidConfig("unknown nonlinearity: " + s + " (expected none or regime_switch)");
}

std::int64_t months_to_steps(double months, std::int64_t step_seconds) {
    if (months <= 0.0) throw InvalidConfig("months must be positive");
    if (step_seconds <= 0) throw InvalidConfig("step_seconds must be positive");
    return std::llround(months * 30.0 * 24.0 * 3600.0 / static_cast<double>(step_seconds));
}

std::int64_t ScenarioConfig::steps() const { return months_to_steps(months, step_seconds); }

void ScenarioConfig::validate() const {
    if (n_zones < 1) throw InvalidConfig("n_zones must be >= 1");
    if (months <= 0.0) throw InvalidConfig("months must be positive");
    if (step_seconds <= 0) throw InvalidConfig("step_seconds must be positive");
    if (steps() < 33) throw InvalidConfig("scenario too short: need at least 33 steps");
    if (latent_weights.rows != static_cast<std::size_t>(n_zones) || latent_weights.cols < 1)
        throw InvalidConfig("latent_weights must be n_zones x L with L >= 1");
    if (latent_weights.cols > 3)
        throw InvalidConfig("at most 3 latent factors are available");
    for (std::size_t v = 0; v < latent_weights.rows; ++v) {
        double norm = 0.0;
        for (double w : latent_weights.row(v)) norm += w * w;
        if (norm <= 0.0)
            throw InvalidConfig("latent_weights row " + std::to_string(v) + " has zero norm");
    }
    if (noise_sigma.size() != static_cast<std::size_t>(n_zones))
        throw InvalidConfig("noise_sigma must have one entry per zone");
    for (double s : noise_sigma)
        if (s < 0.0) throw InvalidConfig("noise_sigma entries must be >= 0");
    if (base_scale.size() != static_cast<std::size_t>(n_zones))
        throw InvalidConfig("base_scale must have one entry per zone");
    for (double b : base_scale)
        if (b <= 0.0) throw InvalidConfig("base_scale entries must be > 0");
}

FlowPanel generate(const ScenarioConfig& config) {
    config.validate();
    const std::int64_t n = config.steps();
    const std::int64_t spd = std::max<std::int64_t>(1, 86400 / config.step_seconds);
    const std::int64_t burn = kBurnInDays * spd;
    const std::size_t n_factors = config.latent_weights.cols;

    // Independent sub-streams per component, so e.g. adding a zone never
    // perturbs the factor paths.
    Rng demand_rng(mix64(config.seed, 1));
    Rng regime_rng(mix64(config.seed, 2));
    Rng second_rng(mix64(config.seed, 3));
    Rng osc_rng(mix64(config.seed, 4));

    std::vector<Vec> factors;
    factors.push_back(ar1_factor(n, burn, kDemandTauDays, kDemandSd, spd, demand_rng));
    if (config.nonlinearity == Nonlinearity::kRegimeSwitch) {
        const Vec regime = regime_path(n, burn, spd, regime_rng);
        for (std::int64_t t = 0; t < n; ++t)
            factors[0][static_cast<std::size_t>(t)] *= regime[static_cast<std::size_t>(t)];
    }
    if (n_factors >= 2)
        factors.push_back(ar1_factor(n, burn, kSecondTauDays, kSecondSd, spd, second_rng));
    if (n_factors >= 3)
        factors.push_back(ar2_factor(n, burn, kOscPeriodSteps, kOscPoleRadius, kOscSd, osc_rng));

    FlowPanel panel;
    panel.step_seconds = config.step_seconds;
    panel.start_epoch = kDefaultStartEpoch;
    panel.values = Mat(static_cast<std::size_t>(config.n_zones), static_cast<std::size_t>(n));
    for (int v = 0; v < config.n_zones; ++v)
        panel.zone_ids.push_back(std::to_string(v + 1));

    for (int v = 0; v < config.n_zones; ++v) {
        Rng noise_rng(mix64(config.seed, 100 + static_cast<std::uint64_t>(v)));
        const auto weights = config.latent_weights.row(static_cast<std::size_t>(v));
        const double base = config.base_scale[static_cast<std::size_t>(v)];
        const double sigma = config.noise_sigma[static_cast<std::size_t>(v)];
        auto row = panel.values.row(static_cast<std::size_t>(v));
        for (std::int64_t t = 0; t < n; ++t) {
            double g = 0.0;
            for (std::size_t l = 0; l < n_factors; ++l)
                g += weights[l] * factors[l][static_cast<std::size_t>(t)];
            double x = base * seasonal(t, spd) * g + sigma * noise_rng.gaussian();
            row[static_cast<std::size_t>(t)] = std::max(0.0, x);
        }
    }
    return panel;
}

ScenarioConfig default_scenario() {
    ScenarioConfig c;
    c.n_zones = 5;
    c.months = 3.0;
    c.step_seconds = 300;
    c.seed = 42;
    c.nonlinearity = Nonlinearity::kRegimeSwitch;
    c.latent_weights = Mat(5, 3);
    // zones 1, 3, 4, 5 ride the shared demand factor (plus the oscillatory
    // component); zone 2 is dominated by its own factor.
    const double w[5][3] = {
        {1.00, 0.28, 0.55},  // zone 1
        {0.22, 1.30, 0.10},  // zone 2
        {0.92, 0.05, 0.28},  // zone 3
        {1.05, 0.20, 0.60},  // zone 4
        {1.00, 0.12, 0.45},  // zone 5
    };
    for (std::size_t v = 0; v < 5; ++v)
        for (std::size_t l = 0; l < 3; ++l) c.latent_weights(v, l) = w[v][l];
    c.base_scale = {45.0, 28.0, 36.0, 41.0, 50.0};
    // Zone 5's sensor is the noisiest; its neighbours give a cleaner view of
    // the shared demand state.
    c.noise_sigma = {0.5, 0.45, 0.5, 0.5, 1.0};
    return c;
}

}  // namespace dmaflow::synth
