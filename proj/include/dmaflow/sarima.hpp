#pragma once

#include <cstdint>
#include <span>

#include "dmaflow/mat.hpp"

namespace dmaflow::sarima {

// Multiplicative seasonal ARIMA orders (p,d,q)(P,D,Q)_s.
struct SarimaSpec {
    int p = 1, d = 0, q = 1;
    int P = 0, D = 1, Q = 1;
    std::int64_t s = 288;  // one day at 5-minute steps
    bool include_mean = false;

    int n_coeffs() const { return p + q + P + Q; }
    int n_params() const { return n_coeffs() + (include_mean ? 1 : 0); }
    void validate() const;  // throws InvalidConfig
};

struct SarimaFit {
    SarimaSpec spec;
    Vec ar, ma, sar, sma;
    double mean = 0.0;
    double css = 0.0;
    bool converged = false;
    int iterations = 0;
    // Mean of the differenced fit series; pre-sample observations in the
    // residual recursion are anchored here so later forecasts replay the
    // recursion exactly as fitted.
    double presample_mean = 0.0;

    Vec packed_params() const;  // css_objective packing order
};

// Applies (1-B)^d (1-B^s)^D; output length = input - d - D*s.
Vec difference(std::span<const double> series, int d, int D, std::int64_t s);

// Inverse of difference; head holds the first d + D*s values of the original.
Vec integrate(std::span<const double> diffed, int d, int D, std::int64_t s,
              std::span<const double> head);

// Conditional sum of squares: one-step residuals computed recursively with
// pre-sample residuals zero and pre-sample observations at the series mean.
// params are packed [ar, ma, sar, sma, mean?].
double css_objective(const SarimaSpec& spec, std::span<const double> params,
                     std::span<const double> series);

// Minimises the CSS by Nelder-Mead from zero-initialised coefficients (mean
// initialised to the differenced-series mean). |coefficient| >= 1 costs a 1e6
// penalty per violation. Deterministic; converged reflects a 1e-8 relative
// simplex spread within 500 iterations.
SarimaFit fit(const SarimaSpec& spec, std::span<const double> series);

// Recursive forecast on the differenced scale with future residuals zero,
// integrated back to the original scale.
Vec forecast(const SarimaFit& fit, std::span<const double> history, std::int64_t horizon);

// One-step-ahead predictions for every index in [first_label, series size),
// each using observations strictly before it; the fit is never updated.
Vec rolling_one_step(const SarimaFit& fit, std::span<const double> series,
                     std::int64_t first_label);

}  // namespace dmaflow::sarima
