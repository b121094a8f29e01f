#pragma once

// Ground truth, error metrics and timescale aggregation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "quietroom/types.hpp"

namespace quietroom::eval {

/// Running head count sampled at the start of every second: counts[s] sums
/// the deltas of all events with timestamp <= s. Throws DataError if the
/// events are unsorted, outside [0, duration) or drive the count negative.
OccupancySeries occupancy_from_events(const std::vector<EntryExitEvent>& events, std::int64_t duration_s);

struct MetricsReport {
    double mae = 0.0;
    double rmse = 0.0;
    double rho = 0.0;
    std::size_t count = 0;
};

/// Pearson correlation; 0 when either series has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> truth);

/// Non-overlapping window means; a trailing partial window is dropped.
std::vector<double> aggregate(std::span<const double> series, std::size_t window);

/// Predictions re-aligned to the wall-clock seconds they describe. Seconds
/// without a prediction are simply absent.
struct AlignedSeries {
    std::vector<std::int64_t> seconds;
    std::vector<double> pred;
    std::vector<double> truth;

    std::size_t size() const { return seconds.size(); }
    void push(std::int64_t second, double p, double t) {
        seconds.push_back(second);
        pred.push_back(p);
        truth.push_back(t);
    }
};

/// Wall-clock windows [begin + k*window, begin + (k+1)*window) fully inside
/// [begin, end). Predictions and truth are averaged separately over the
/// seconds present in each window; empty windows are skipped.
AlignedSeries aggregate_aligned(const AlignedSeries& series, std::int64_t window, std::int64_t begin,
                                std::int64_t end);

/// Predicts the training mean at every test second.
MetricsReport baseline_mean(std::span<const double> train_truth, std::span<const double> test_truth);

struct TableRow {
    std::string model;
    std::string modality;
    MetricsReport metrics;
};

/// Fixed-width text table: model, modality, MAE, RMSE, rho.
std::string format_table(const std::vector<TableRow>& rows);

nlohmann::json to_json(const MetricsReport& report);

/// "time,truth,prediction" lines for external plotting.
void write_plot_csv(const std::string& path, const AlignedSeries& series);

}  // namespace quietroom::eval
