#include "dmaflow/sarima.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "dmaflow/errors.hpp"

namespace dmaflow::sarima {

namespace {

constexpr double kCoefPenalty = 1e6;
constexpr int kMaxIterations = 500;
constexpr double kSpreadTol = 1e-8;

struct LagTerm {
    std::int64_t lag;
    double coef;
};

// Expanded multiplicative polynomial terms. AR side: phi(B)Phi(B^s) applied to
// the centred series; MA side: theta(B)Theta(B^s) applied to residuals.
struct RecursionModel {
    std::vector<LagTerm> ar;
    std::vector<LagTerm> ma;
    double mu = 0.0;
    double presample = 0.0;  // raw pre-sample observation value
};

RecursionModel build_model(const SarimaSpec& spec, std::span<const double> ar,
                           std::span<const double> ma, std::span<const double> sar,
                           std::span<const double> sma, double mu, double presample) {
    RecursionModel m;
    m.mu = mu;
    m.presample = presample;
    for (int i = 0; i < spec.p; ++i) m.ar.push_back({i + 1, ar[i]});
    for (int j = 0; j < spec.P; ++j) m.ar.push_back({(j + 1) * spec.s, sar[j]});
    for (int i = 0; i < spec.p; ++i)
        for (int j = 0; j < spec.P; ++j) m.ar.push_back({i + 1 + (j + 1) * spec.s, -ar[i] * sar[j]});
    for (int i = 0; i < spec.q; ++i) m.ma.push_back({i + 1, ma[i]});
    for (int j = 0; j < spec.Q; ++j) m.ma.push_back({(j + 1) * spec.s, sma[j]});
    for (int i = 0; i < spec.q; ++i)
        for (int j = 0; j < spec.Q; ++j) m.ma.push_back({i + 1 + (j + 1) * spec.s, ma[i] * sma[j]});
    return m;
}

// One-step prediction of w[t] from the recursion state. residuals must hold
// e[0..t); indices before zero fall back to the pre-sample conventions.
double predict_step(const RecursionModel& m, std::span<const double> w,
                    std::span<const double> residuals, std::int64_t t) {
    double pred = m.mu;
    for (const auto& term : m.ar) {
        const std::int64_t i = t - term.lag;
        const double obs = i >= 0 ? w[static_cast<std::size_t>(i)] : m.presample;
        pred += term.coef * (obs - m.mu);
    }
    for (const auto& term : m.ma) {
        const std::int64_t i = t - term.lag;
        if (i >= 0) pred += term.coef * residuals[static_cast<std::size_t>(i)];
    }
    return pred;
}

// Runs the full recursion over w. Returns the CSS; optionally keeps residuals
// and one-step predictions.
double run_recursion(const RecursionModel& m, std::span<const double> w, Vec* residuals_out,
                     Vec* preds_out) {
    const std::int64_t n = static_cast<std::int64_t>(w.size());
    Vec residuals(static_cast<std::size_t>(n));
    double css = 0.0;
    for (std::int64_t t = 0; t < n; ++t) {
        const double pred = predict_step(m, w, residuals, t);
        const double e = w[static_cast<std::size_t>(t)] - pred;
        residuals[static_cast<std::size_t>(t)] = e;
        css += e * e;
        if (preds_out) (*preds_out)[static_cast<std::size_t>(t)] = pred;
    }
    if (residuals_out) *residuals_out = std::move(residuals);
    return css;
}

double sample_mean(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct Unpacked {
    Vec ar, ma, sar, sma;
    double mean = 0.0;
};

Unpacked unpack(const SarimaSpec& spec, std::span<const double> params) {
    if (params.size() != static_cast<std::size_t>(spec.n_params()))
        throw InvalidConfig("parameter vector size " + std::to_string(params.size()) +
                            " does not match spec (" + std::to_string(spec.n_params()) + ")");
    Unpacked u;
    std::size_t k = 0;
    for (int i = 0; i < spec.p; ++i) u.ar.push_back(params[k++]);
    for (int i = 0; i < spec.q; ++i) u.ma.push_back(params[k++]);
    for (int i = 0; i < spec.P; ++i) u.sar.push_back(params[k++]);
    for (int i = 0; i < spec.Q; ++i) u.sma.push_back(params[k++]);
    if (spec.include_mean) u.mean = params[k++];
    return u;
}

int coefficient_violations(const Unpacked& u) {
    int n = 0;
    for (const Vec* v : {&u.ar, &u.ma, &u.sar, &u.sma})
        for (double c : *v)
            if (!(std::fabs(c) < 1.0)) ++n;
    return n;
}

// Coefficients of (1-B)^d (1-B^s)^D, length d + D*s + 1, c[0] == 1.
Vec diff_polynomial(int d, int D, std::int64_t s) {
    Vec c{1.0};
    auto mult = [&c](std::int64_t lag) {
        Vec next(c.size() + static_cast<std::size_t>(lag), 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + static_cast<std::size_t>(lag)] -= c[i];
        }
        c = std::move(next);
    };
    for (int i = 0; i < d; ++i) mult(1);
    for (int j = 0; j < D; ++j) mult(s);
    return c;
}

struct NelderMeadResult {
    Vec x;
    double fx = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Standard Nelder-Mead with reflection 1, expansion 2, contraction 0.5 and
// shrink 0.5. Fully deterministic.
NelderMeadResult nelder_mead(const std::function<double(const Vec&)>& f, const Vec& x0,
                             const Vec& step, int max_iter, double tol) {
    const std::size_t n = x0.size();
    std::vector<Vec> xs(n + 1, x0);
    for (std::size_t i = 0; i < n; ++i) xs[i + 1][i] += step[i];
    Vec fs(n + 1);
    for (std::size_t i = 0; i <= n; ++i) fs[i] = f(xs[i]);

    std::vector<std::size_t> order(n + 1);
    NelderMeadResult result;
    int iter = 0;
    for (; iter < max_iter; ++iter) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
        const std::size_t best = order.front(), worst = order.back();
        const std::size_t second_worst = order[n - 1];

        if (fs[worst] - fs[best] <= tol * (1.0 + std::fabs(fs[best]))) {
            result.converged = true;
            break;
        }

        Vec centroid(n, 0.0);
        for (std::size_t i = 0; i <= n; ++i) {
            if (i == worst) continue;
            for (std::size_t k = 0; k < n; ++k) centroid[k] += xs[i][k];
        }
        for (double& c : centroid) c /= static_cast<double>(n);

        auto blend = [&](double coef) {
            Vec x(n);
            for (std::size_t k = 0; k < n; ++k)
                x[k] = centroid[k] + coef * (xs[worst][k] - centroid[k]);
            return x;
        };

        Vec xr = blend(-1.0);
        const double fr = f(xr);
        if (fr < fs[best]) {
            Vec xe = blend(-2.0);
            const double fe = f(xe);
            if (fe < fr) {
                xs[worst] = std::move(xe);
                fs[worst] = fe;
            } else {
                xs[worst] = std::move(xr);
                fs[worst] = fr;
            }
        } else if (fr < fs[second_worst]) {
            xs[worst] = std::move(xr);
            fs[worst] = fr;
        } else {
            const bool outside = fr < fs[worst];
            Vec xc = blend(outside ? -0.5 : 0.5);
            const double fc = f(xc);
            if (fc < (outside ? fr : fs[worst])) {
                xs[worst] = std::move(xc);
                fs[worst] = fc;
            } else {
                for (std::size_t i = 0; i <= n; ++i) {
                    if (i == best) continue;
                    for (std::size_t k = 0; k < n; ++k)
                        xs[i][k] = xs[best][k] + 0.5 * (xs[i][k] - xs[best][k]);
                    fs[i] = f(xs[i]);
                }
            }
        }
    }
    result.iterations = iter;
    std::size_t best = 0;
    for (std::size_t i = 1; i <= n; ++i)
        if (fs[i] < fs[best]) best = i;
    result.x = xs[best];
    result.fx = fs[best];
    return result;
}

void check_finite(std::span<const double> series) {
    for (double v : series)
        if (!std::isfinite(v)) throw NonFiniteInput("series contains a non-finite value");
}

}  // namespace

void SarimaSpec::validate() const {
    if (p < 0 || d < 0 || q < 0 || P < 0 || D < 0 || Q < 0)
        throw InvalidConfig("SARIMA orders must be non-negative");
    if (s < 1) throw InvalidConfig("seasonal period s must be >= 1");
    if (n_coeffs() == 0 && !include_mean)
        throw InvalidConfig("need p+q+P+Q >= 1 or include_mean");
}

Vec SarimaFit::packed_params() const {
    Vec v;
    v.insert(v.end(), ar.begin(), ar.end());
    v.insert(v.end(), ma.begin(), ma.end());
    v.insert(v.end(), sar.begin(), sar.end());
    v.insert(v.end(), sma.begin(), sma.end());
    if (spec.include_mean) v.push_back(mean);
    return v;
}

Vec difference(std::span<const double> series, int d, int D, std::int64_t s) {
    if (d < 0 || D < 0 || s < 1) throw InvalidConfig("invalid differencing orders");
    const std::int64_t needed = d + D * s;
    if (static_cast<std::int64_t>(series.size()) <= needed)
        throw SeriesTooShort("series of length " + std::to_string(series.size()) +
                             " too short for d=" + std::to_string(d) + ", D=" + std::to_string(D) +
                             ", s=" + std::to_string(s));
    Vec cur(series.begin(), series.end());
    for (int i = 0; i < d; ++i) {
        Vec next(cur.size() - 1);
        for (std::size_t t = 0; t < next.size(); ++t) next[t] = cur[t + 1] - cur[t];
        cur = std::move(next);
    }
    for (int j = 0; j < D; ++j) {
        Vec next(cur.size() - static_cast<std::size_t>(s));
        for (std::size_t t = 0; t < next.size(); ++t)
            next[t] = cur[t + static_cast<std::size_t>(s)] - cur[t];
        cur = std::move(next);
    }
    return cur;
}

Vec integrate(std::span<const double> diffed, int d, int D, std::int64_t s,
              std::span<const double> head) {
    if (head.size() != static_cast<std::size_t>(d + D * s))
        throw LengthMismatch("integration head must hold the first d + D*s original values");
    if (D > 0) {
        // Rebuild the series one seasonal pass up; its first s values follow
        // from differencing the head with the remaining operators.
        const Vec upper_head = difference(head, d, D - 1, s);
        Vec z(diffed.size() + static_cast<std::size_t>(s));
        std::copy(upper_head.begin(), upper_head.end(), z.begin());
        for (std::size_t t = static_cast<std::size_t>(s); t < z.size(); ++t)
            z[t] = diffed[t - static_cast<std::size_t>(s)] + z[t - static_cast<std::size_t>(s)];
        return integrate(z, d, D - 1, s, head.first(static_cast<std::size_t>(d + (D - 1) * s)));
    }
    if (d > 0) {
        const Vec upper_head = difference(head.first(static_cast<std::size_t>(d)), d - 1, 0, s);
        Vec y(diffed.size() + 1);
        y[0] = upper_head[0];
        for (std::size_t t = 1; t < y.size(); ++t) y[t] = diffed[t - 1] + y[t - 1];
        return integrate(y, d - 1, 0, s, head.first(static_cast<std::size_t>(d - 1)));
    }
    return Vec(diffed.begin(), diffed.end());
}

double css_objective(const SarimaSpec& spec, std::span<const double> params,
                     std::span<const double> series) {
    spec.validate();
    check_finite(series);
    const Unpacked u = unpack(spec, params);
    const Vec w = difference(series, spec.d, spec.D, spec.s);
    const double wbar = sample_mean(w);
    const RecursionModel m =
        build_model(spec, u.ar, u.ma, u.sar, u.sma, spec.include_mean ? u.mean : 0.0, wbar);
    return run_recursion(m, w, nullptr, nullptr);
}

SarimaFit fit(const SarimaSpec& spec, std::span<const double> series) {
    spec.validate();
    check_finite(series);
    const Vec w = difference(series, spec.d, spec.D, spec.s);
    if (w.size() < 2) throw SeriesTooShort("differenced series needs at least 2 points");
    const double wbar = sample_mean(w);

    Vec x0(static_cast<std::size_t>(spec.n_params()), 0.0);
    Vec step(x0.size(), 0.1);
    if (spec.include_mean) {
        x0.back() = wbar;
        step.back() = 0.1 * std::max(1.0, std::fabs(wbar));
    }

    const auto objective = [&](const Vec& params) {
        const Unpacked u = unpack(spec, params);
        const RecursionModel m =
            build_model(spec, u.ar, u.ma, u.sar, u.sma, spec.include_mean ? u.mean : 0.0, wbar);
        double css = run_recursion(m, w, nullptr, nullptr);
        if (!std::isfinite(css)) css = 1e30;
        return css + kCoefPenalty * coefficient_violations(u);
    };

    const NelderMeadResult r = nelder_mead(objective, x0, step, kMaxIterations, kSpreadTol);
    const Unpacked u = unpack(spec, r.x);

    SarimaFit fitres;
    fitres.spec = spec;
    fitres.ar = u.ar;
    fitres.ma = u.ma;
    fitres.sar = u.sar;
    fitres.sma = u.sma;
    fitres.mean = spec.include_mean ? u.mean : 0.0;
    fitres.presample_mean = wbar;
    fitres.converged = r.converged;
    fitres.iterations = r.iterations;
    {
        const RecursionModel m = build_model(spec, u.ar, u.ma, u.sar, u.sma, fitres.mean, wbar);
        fitres.css = run_recursion(m, w, nullptr, nullptr);
    }
    return fitres;
}

Vec forecast(const SarimaFit& fit, std::span<const double> history, std::int64_t horizon) {
    if (horizon < 1) throw InvalidConfig("forecast horizon must be >= 1");
    const SarimaSpec& spec = fit.spec;
    const std::int64_t lead = spec.d + spec.D * spec.s;
    if (static_cast<std::int64_t>(history.size()) <= lead)
        throw InsufficientHistory("history too short for the differencing orders");
    check_finite(history);

    const Vec w = difference(history, spec.d, spec.D, spec.s);
    const RecursionModel m =
        build_model(spec, fit.ar, fit.ma, fit.sar, fit.sma, fit.mean, fit.presample_mean);
    Vec residuals;
    run_recursion(m, w, &residuals, nullptr);

    // Forecast on the differenced scale; future residuals are zero.
    const std::int64_t n = static_cast<std::int64_t>(w.size());
    Vec w_ext(w.begin(), w.end());
    Vec e_ext(residuals.begin(), residuals.end());
    w_ext.resize(static_cast<std::size_t>(n + horizon));
    e_ext.resize(static_cast<std::size_t>(n + horizon), 0.0);
    for (std::int64_t h = 0; h < horizon; ++h) {
        const std::int64_t t = n + h;
        w_ext[static_cast<std::size_t>(t)] = predict_step(m, w_ext, e_ext, t);
    }

    // Integrate back to the original scale using observed history and, for
    // deeper horizons, the forecasts produced so far.
    const Vec c = diff_polynomial(spec.d, spec.D, spec.s);
    const std::int64_t hist_n = static_cast<std::int64_t>(history.size());
    Vec x_ext(history.begin(), history.end());
    x_ext.resize(static_cast<std::size_t>(hist_n + horizon));
    for (std::int64_t h = 0; h < horizon; ++h) {
        const std::int64_t t = hist_n + h;
        double x = w_ext[static_cast<std::size_t>(n + h)];
        for (std::size_t j = 1; j < c.size(); ++j)
            x -= c[j] * x_ext[static_cast<std::size_t>(t) - j];
        x_ext[static_cast<std::size_t>(t)] = x;
    }
    return Vec(x_ext.begin() + hist_n, x_ext.end());
}

Vec rolling_one_step(const SarimaFit& fit, std::span<const double> series,
                     std::int64_t first_label) {
    const SarimaSpec& spec = fit.spec;
    const std::int64_t lead = spec.d + spec.D * spec.s;
    const std::int64_t n = static_cast<std::int64_t>(series.size());
    if (first_label < lead + 1 || first_label >= n)
        throw InsufficientHistory("first_label must lie in [d + D*s + 1, series size)");
    check_finite(series);

    const Vec w = difference(series, spec.d, spec.D, spec.s);
    const RecursionModel m =
        build_model(spec, fit.ar, fit.ma, fit.sar, fit.sma, fit.mean, fit.presample_mean);
    Vec preds_w(w.size());
    Vec residuals;
    run_recursion(m, w, &residuals, &preds_w);

    const Vec c = diff_polynomial(spec.d, spec.D, spec.s);
    Vec out;
    out.reserve(static_cast<std::size_t>(n - first_label));
    for (std::int64_t label = first_label; label < n; ++label) {
        double x = preds_w[static_cast<std::size_t>(label - lead)];
        for (std::size_t j = 1; j < c.size(); ++j)
            x -= c[j] * series[static_cast<std::size_t>(label) - j];
        out.push_back(x);
    }
    return out;
}

}  // namespace dmaflow::sarima
