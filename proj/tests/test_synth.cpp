#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dmaflow/errors.hpp"
#include "dmaflow/series.hpp"
#include "dmaflow/synth.hpp"

using namespace dmaflow;
using namespace dmaflow::synth;

namespace {

double autocorr(std::span<const double> x, std::size_t lag) {
    const std::size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        den += (x[t] - mean) * (x[t] - mean);
        if (t + lag < n) num += (x[t] - mean) * (x[t + lag] - mean);
    }
    return num / den;
}

double mean_of(std::span<const double> x) {
    double m = 0.0;
    for (double v : x) m += v;
    return m / static_cast<double>(x.size());
}

}  // namespace

TEST_SUITE_BEGIN("synth");

TEST_CASE("months_to_steps arithmetic") {
    CHECK(months_to_steps(1.5, 300) == 12960);
    CHECK(months_to_steps(3.0, 300) == 25920);
    CHECK(months_to_steps(1.0 / 8640.0, 300) == 1);
    CHECK(months_to_steps(0.5, 300) == 4320);
    CHECK_THROWS_AS((void)months_to_steps(-1.0, 300), InvalidConfig);
}

TEST_CASE("generate is deterministic") {
    auto cfg = default_scenario();
    cfg.months = 0.05;
    auto a = generate(cfg);
    auto b = generate(cfg);
    CHECK(a.values.data == b.values.data);  // bitwise
    CHECK(a.zone_ids == b.zone_ids);
}

TEST_CASE("identical loadings with zero noise give correlation 1") {
    ScenarioConfig cfg;
    cfg.n_zones = 2;
    cfg.months = 0.05;
    cfg.latent_weights = Mat(2, 2);
    cfg.latent_weights(0, 0) = 1.0;
    cfg.latent_weights(0, 1) = 0.4;
    cfg.latent_weights(1, 0) = 1.0;
    cfg.latent_weights(1, 1) = 0.4;
    cfg.noise_sigma = {0.0, 0.0};
    cfg.base_scale = {10.0, 20.0};
    cfg.nonlinearity = Nonlinearity::kNone;
    cfg.seed = 9;
    auto p = generate(cfg);
    CHECK(pearson(p.zone_series(std::size_t{0}), p.zone_series(std::size_t{1})) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("all generated values are non-negative") {
    auto cfg = default_scenario();
    cfg.months = 0.1;
    cfg.noise_sigma = {40.0, 40.0, 40.0, 40.0, 40.0};  // force the clip to matter
    auto p = generate(cfg);
    const double lo = *std::min_element(p.values.data.begin(), p.values.data.end());
    CHECK(lo >= 0.0);
}

TEST_CASE("daily seasonality dominates the half-day lag") {
    auto cfg = default_scenario();
    cfg.months = 0.5;
    cfg.nonlinearity = Nonlinearity::kNone;
    cfg.noise_sigma = {0.0, 0.0, 0.0, 0.0, 0.0};
    auto p = generate(cfg);
    for (std::size_t v = 0; v < p.n_zones(); ++v) {
        const auto s = p.zone_series(v);
        CHECK(autocorr(s, 288) > autocorr(s, 144));
    }
}

TEST_CASE("per-zone means are stable across seeds") {
    auto cfg = default_scenario();
    cfg.months = 1.0;
    auto a = generate(cfg);
    cfg.seed = 1234;
    auto b = generate(cfg);
    for (std::size_t v = 0; v < a.n_zones(); ++v) {
        const double ma = mean_of(a.zone_series(v));
        const double mb = mean_of(b.zone_series(v));
        CHECK(std::abs(ma - mb) / ma < 0.10);
    }
}

TEST_CASE("default scenario separates zone 5's correlated set") {
    auto cfg = default_scenario();
    auto panel = generate(cfg);
    // correlations over the training split only (first 1.5 months)
    const IndexRange train{0, months_to_steps(1.5, cfg.step_seconds)};
    auto m = correlation_matrix(panel, train);
    const std::size_t z5 = 4;
    for (std::size_t other : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
        INFO("zone index ", other);
        CHECK(m.rho(z5, other) >= 0.9);
    }
    CHECK(m.rho(z5, 1) < 0.9);

    auto set = select_correlated(m, "5", 0.9);
    CHECK(set.members == std::vector<std::string>{"1", "3", "4"});
}

TEST_CASE("config validation") {
    auto cfg = default_scenario();
    cfg.months = 1e-4;
    CHECK_THROWS_AS((void)generate(cfg), InvalidConfig);

    cfg = default_scenario();
    cfg.noise_sigma = {1.0};
    CHECK_THROWS_AS((void)generate(cfg), InvalidConfig);

    cfg = default_scenario();
    for (std::size_t l = 0; l < 3; ++l) cfg.latent_weights(2, l) = 0.0;
    CHECK_THROWS_AS((void)generate(cfg), InvalidConfig);
}

TEST_SUITE_END();
