#include "dmaflow/series.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <utility>

#include "dmaflow/errors.hpp"
#include "dmaflow/parallel.hpp"

namespace dmaflow {

namespace {

bool parse_unsigned(const std::string& s, unsigned long long& out) {
    if (s.empty() || s.size() > 18) return false;
    for (char c : s) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    out = std::stoull(s);
    return true;
}

}  // namespace

bool zone_id_less(const std::string& a, const std::string& b) {
    unsigned long long ua = 0, ub = 0;
    if (parse_unsigned(a, ua) && parse_unsigned(b, ub)) {
        if (ua != ub) return ua < ub;
        return a < b;  // "01" vs "1"
    }
    return a < b;
}

std::size_t FlowPanel::zone_index(const std::string& id) const {
    for (std::size_t i = 0; i < zone_ids.size(); ++i) {
        if (zone_ids[i] == id) return i;
    }
    throw UnknownZone("unknown zone id: " + id);
}

void FlowPanel::validate() const {
    if (zone_ids.empty()) throw InvalidConfig("panel has no zones");
    if (values.rows != zone_ids.size())
        throw InvalidConfig("panel row count does not match zone id count");
    if (values.cols < 1) throw InvalidConfig("panel must contain at least one time step");
    if (step_seconds <= 0) throw InvalidConfig("panel step_seconds must be positive");
    std::set<std::string> uniq(zone_ids.begin(), zone_ids.end());
    if (uniq.size() != zone_ids.size()) throw InvalidConfig("panel zone ids are not unique");
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw LengthMismatch("pearson: series lengths differ (" + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()) + ")");
    const std::size_t n = a.size();
    if (n < 2) throw LengthMismatch("pearson: need at least 2 points");

    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);

    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) throw ConstantSeries("pearson: zero-variance series");
    return cov / (std::sqrt(var_a) * std::sqrt(var_b));
}

std::size_t CorrelationMatrix::zone_index(const std::string& id) const {
    for (std::size_t i = 0; i < zone_ids.size(); ++i) {
        if (zone_ids[i] == id) return i;
    }
    throw UnknownZone("unknown zone id: " + id);
}

namespace {

void check_correlation_range(const FlowPanel& panel, IndexRange range) {
    panel.validate();
    if (range.begin < 0 || range.end > panel.steps() || range.length() < 2)
        throw InvalidConfig("correlation range must lie within the panel and span >= 2 steps");
    // Surface a dead sensor with its zone id before any pair is attempted.
    for (std::size_t v = 0; v < panel.n_zones(); ++v) {
        auto s = panel.zone_series(v).subspan(range.begin, range.length());
        const double first = s.front();
        if (std::all_of(s.begin(), s.end(), [&](double x) { return x == first; }))
            throw ConstantSeries("zone " + panel.zone_ids[v] + " is constant over the range");
    }
}

CorrelationMatrix correlation_matrix_impl(const FlowPanel& panel, IndexRange range,
                                          bool use_omp) {
    check_correlation_range(panel, range);
    const std::size_t n = panel.n_zones();
    CorrelationMatrix out{panel.zone_ids, Mat(n, n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) out.rho(i, i) = 1.0;

    // Strict upper triangle, flattened so the parallel loop is balanced.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);

    const auto kernel = [&](std::size_t idx) {
        const auto [i, j] = pairs[idx];
        const double r =
            pearson(panel.zone_series(i).subspan(range.begin, range.length()),
                    panel.zone_series(j).subspan(range.begin, range.length()));
        out.rho(i, j) = r;
        out.rho(j, i) = r;
    };

    if (use_omp) {
#pragma omp parallel for schedule(static)
        for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(pairs.size()); ++idx)
            kernel(static_cast<std::size_t>(idx));
    } else {
        for (std::size_t idx = 0; idx < pairs.size(); ++idx) kernel(idx);
    }
    return out;
}

}  // namespace

CorrelationMatrix correlation_matrix(const FlowPanel& panel, IndexRange range) {
    return correlation_matrix_impl(panel, range, parallel::enabled());
}

CorrelationMatrix correlation_matrix_serial(const FlowPanel& panel, IndexRange range) {
    return correlation_matrix_impl(panel, range, false);
}

CorrelationSet select_correlated(const CorrelationMatrix& matrix, const std::string& target,
                                 double theta) {
    if (!(theta >= 0.0 && theta <= 1.0))
        throw InvalidConfig("correlation threshold must lie in [0, 1]");
    const std::size_t t = matrix.zone_index(target);

    CorrelationSet set{target, theta, {}};
    for (std::size_t j = 0; j < matrix.zone_ids.size(); ++j) {
        if (j == t) continue;
        if (matrix.rho(t, j) >= theta) set.members.push_back(matrix.zone_ids[j]);
    }
    std::sort(set.members.begin(), set.members.end(), zone_id_less);
    return set;
}

std::string to_string(DatasetMode mode) {
    switch (mode) {
        case DatasetMode::kLocal: return "local";
        case DatasetMode::kLocalCorrelated: return "local+correlated";
        case DatasetMode::kCorrelated: return "correlated";
    }
    return "?";
}

DatasetMode parse_dataset_mode(const std::string& s) {
    if (s == "local") return DatasetMode::kLocal;
    if (s == "local+correlated") return DatasetMode::kLocalCorrelated;
    if (s == "correlated") return DatasetMode::kCorrelated;
    throw InvalidConfig("unknown dataset mode: " + s +
                        " (expected local, local+correlated or correlated)");
}

WindowedDataset build_dataset(const FlowPanel& panel, const std::string& target,
                              std::vector<std::string> members, std::int64_t window,
                              IndexRange range, DatasetMode mode) {
    panel.validate();
    if (window < 1) throw InvalidConfig("window size must be >= 1");
    if (range.begin < 0 || range.end > panel.steps())
        throw InvalidConfig("dataset range must lie within the panel");
    if (range.length() <= window)
        throw WindowTooLarge("range of length " + std::to_string(range.length()) +
                             " cannot fit window " + std::to_string(window) +
                             " plus a one-step label");

    const std::size_t target_idx = panel.zone_index(target);

    if (mode == DatasetMode::kLocal) {
        members.clear();
    } else {
        if (mode == DatasetMode::kCorrelated && members.empty())
            throw EmptyCorrelationSet("mode=correlated requires at least one member zone");
        std::sort(members.begin(), members.end(), zone_id_less);
        if (std::adjacent_find(members.begin(), members.end()) != members.end())
            throw InvalidConfig("duplicate member zone id");
        for (const auto& m : members) {
            if (m == target)
                throw InvalidConfig("target zone " + target + " may not appear in members");
        }
    }

    std::vector<std::size_t> row_zones;
    if (mode != DatasetMode::kCorrelated) row_zones.push_back(target_idx);
    for (const auto& m : members) row_zones.push_back(panel.zone_index(m));

    const std::size_t k = row_zones.size();
    const std::int64_t n_samples = range.length() - window;

    WindowedDataset ds;
    ds.mode = mode;
    ds.inputs.reserve(static_cast<std::size_t>(n_samples));
    ds.targets.reserve(static_cast<std::size_t>(n_samples));

    const auto target_series = panel.zone_series(target_idx);
    for (std::int64_t t = range.begin + window - 1; t <= range.end - 2; ++t) {
        FeatureWindow fw;
        fw.t_index = t;
        fw.values = Mat(k, static_cast<std::size_t>(window));
        for (std::size_t r = 0; r < k; ++r) {
            const auto src = panel.zone_series(row_zones[r]);
            for (std::int64_t c = 0; c < window; ++c)
                fw.values(r, static_cast<std::size_t>(c)) = src[t - window + 1 + c];
        }
        ds.inputs.push_back(std::move(fw));
        ds.targets.push_back(target_series[t + 1]);
    }
    return ds;
}

}  // namespace dmaflow
