#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmaflow/mat.hpp"

namespace dmaflow {

// 2025-01-06T00:00:00Z, a Monday. Generated panels start on a week boundary so
// weekday/weekend structure is aligned with the series origin.
inline constexpr std::int64_t kDefaultStartEpoch = 1736121600;

// Half-open interval of time-step indices.
struct IndexRange {
    std::int64_t begin = 0;
    std::int64_t end = 0;

    std::int64_t length() const { return end - begin; }
    bool contains(std::int64_t i) const { return i >= begin && i < end; }
    bool operator==(const IndexRange&) const = default;
};

// Multi-zone consumption panel: one row per zone, one column per time step.
struct FlowPanel {
    std::vector<std::string> zone_ids;
    Mat values;  // n x T
    std::int64_t start_epoch = kDefaultStartEpoch;
    std::int64_t step_seconds = 300;

    std::size_t n_zones() const { return zone_ids.size(); }
    std::int64_t steps() const { return static_cast<std::int64_t>(values.cols); }

    // Throws UnknownZone.
    std::size_t zone_index(const std::string& id) const;
    std::span<const double> zone_series(std::size_t idx) const { return values.row(idx); }
    std::span<const double> zone_series(std::string const& id) const {
        return values.row(zone_index(id));
    }

    // Throws InvalidConfig if the invariants do not hold (unique ids, n x T
    // shape with T >= 1, positive step).
    void validate() const;
};

// Orders "2" before "10": ids that parse as unsigned integers compare
// numerically, everything else lexicographically.
bool zone_id_less(const std::string& a, const std::string& b);

// Pearson correlation over the full given range. Throws LengthMismatch when
// sizes differ or fewer than 2 points are given, ConstantSeries on zero
// variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct CorrelationMatrix {
    std::vector<std::string> zone_ids;
    Mat rho;  // n x n, symmetric, unit diagonal

    std::size_t zone_index(const std::string& id) const;
};

// Pairwise pearson over [range.begin, range.end) only; entries are computed
// once per pair and mirrored. ConstantSeries names the offending zone.
CorrelationMatrix correlation_matrix(const FlowPanel& panel, IndexRange range);
// Serial reference for the OpenMP kernel above; bit-identical output.
CorrelationMatrix correlation_matrix_serial(const FlowPanel& panel, IndexRange range);

struct CorrelationSet {
    std::string target;
    double theta = 0.0;
    std::vector<std::string> members;  // ascending by id, target excluded
};

// Members are exactly the zones with rho[target][z] >= theta (ties included),
// ascending by id. theta must lie in [0, 1].
CorrelationSet select_correlated(const CorrelationMatrix& matrix, const std::string& target,
                                 double theta);

enum class DatasetMode {
    kLocal,            // target's own window only
    kLocalCorrelated,  // target window plus correlated-zone windows
    kCorrelated,       // correlated-zone windows only
};

std::string to_string(DatasetMode mode);
DatasetMode parse_dataset_mode(const std::string& s);  // throws InvalidConfig

// One supervised input: k rows (zones) by W columns (time, oldest -> newest).
// t_index is the panel index of the newest column.
struct FeatureWindow {
    Mat values;
    std::int64_t t_index = 0;
};

struct WindowedDataset {
    std::vector<FeatureWindow> inputs;
    Vec targets;
    DatasetMode mode = DatasetMode::kLocal;

    std::size_t size() const { return inputs.size(); }
    std::size_t channels() const { return inputs.empty() ? 0 : inputs.front().values.rows; }
    std::size_t window() const { return inputs.empty() ? 0 : inputs.front().values.cols; }
};

// One sample per t in [range.begin + W - 1, range.end - 2]: rows per mode
// (local -> target only; local+correlated -> target then members ascending;
// correlated -> members only), each row the W values ending at t, label the
// target value at t + 1. Windows never reach outside [range.begin, range.end).
WindowedDataset build_dataset(const FlowPanel& panel, const std::string& target,
                              std::vector<std::string> members, std::int64_t window,
                              IndexRange range, DatasetMode mode);

}  // namespace dmaflow
