#include "quietroom/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "quietroom/error.hpp"

namespace quietroom::eval {

OccupancySeries occupancy_from_events(const std::vector<EntryExitEvent>& events, std::int64_t duration_s) {
    if (duration_s < 0) throw ConfigError("occupancy_from_events: negative duration");
    OccupancySeries out;
    out.counts.assign(static_cast<std::size_t>(duration_s), 0);
    std::size_t next = 0;
    int count = 0;
    double last = -1.0;
    for (const auto& e : events) {
        if (e.delta != 1 && e.delta != -1) throw DataError("occupancy_from_events: delta must be +1 or -1");
        if (e.timestamp < last) throw DataError("occupancy_from_events: events are not time-sorted");
        if (e.timestamp < 0.0 || e.timestamp >= static_cast<double>(duration_s))
            throw DataError("occupancy_from_events: event outside the scenario");
        last = e.timestamp;
    }
    for (std::int64_t s = 0; s < duration_s; ++s) {
        while (next < events.size() && events[next].timestamp <= static_cast<double>(s)) {
            count += events[next].delta;
            if (count < 0)
                throw DataError("occupancy_from_events: exit without matching entry at t=" +
                                std::to_string(events[next].timestamp));
            ++next;
        }
        out.counts[static_cast<std::size_t>(s)] = count;
    }
    // Events after the last sampled second still have to be consistent.
    for (; next < events.size(); ++next) {
        count += events[next].delta;
        if (count < 0) throw DataError("occupancy_from_events: exit without matching entry");
    }
    return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ConfigError("pearson: length mismatch");
    const auto n = static_cast<double>(a.size());
    if (a.empty()) return 0.0;
    auto constant = [](std::span<const double> x) {
        return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
    };
    if (constant(a) || constant(b)) return 0.0;
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) throw ConfigError("compute_metrics: length mismatch");
    if (pred.empty()) throw DataError("compute_metrics: empty series");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    const auto n = static_cast<double>(pred.size());
    return {abs_sum / n, std::sqrt(sq_sum / n), pearson(pred, truth), pred.size()};
}

std::vector<double> aggregate(std::span<const double> series, std::size_t window) {
    if (window < 1) throw ConfigError("aggregate: window must be >= 1");
    if (window > series.size()) throw ConfigError("aggregate: window longer than series");
    std::vector<double> out;
    for (std::size_t start = 0; start + window <= series.size(); start += window) {
        double sum = 0.0;
        for (std::size_t i = start; i < start + window; ++i) sum += series[i];
        out.push_back(sum / static_cast<double>(window));
    }
    return out;
}

AlignedSeries aggregate_aligned(const AlignedSeries& series, std::int64_t window, std::int64_t begin,
                                std::int64_t end) {
    if (window < 1) throw ConfigError("aggregate: window must be >= 1");
    if (window > end - begin) throw ConfigError("aggregate: window longer than series");
    const auto windows = static_cast<std::size_t>((end - begin) / window);
    std::vector<double> psum(windows, 0.0), tsum(windows, 0.0);
    std::vector<std::size_t> n(windows, 0);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto s = series.seconds[i];
        if (s < begin) continue;
        const auto k = static_cast<std::size_t>((s - begin) / window);
        if (k >= windows) continue;
        psum[k] += series.pred[i];
        tsum[k] += series.truth[i];
        ++n[k];
    }
    AlignedSeries out;
    for (std::size_t k = 0; k < windows; ++k) {
        if (n[k] == 0) continue;
        out.push(begin + static_cast<std::int64_t>(k) * window, psum[k] / static_cast<double>(n[k]),
                 tsum[k] / static_cast<double>(n[k]));
    }
    return out;
}

MetricsReport baseline_mean(std::span<const double> train_truth, std::span<const double> test_truth) {
    if (train_truth.empty()) throw DataError("baseline_mean: empty training truth");
    const double mean = std::accumulate(train_truth.begin(), train_truth.end(), 0.0) / static_cast<double>(train_truth.size());
    std::vector<double> pred(test_truth.size(), mean);
    return compute_metrics(pred, test_truth);
}

std::string format_table(const std::vector<TableRow>& rows) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-36s %8s %8s %8s\n", "Model", "Modality", "MAE", "RMSE", "rho");
    out << line << std::string(92, '-') << '\n';
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-28s %-36s %8.3f %8.3f %8.3f\n", r.model.c_str(), r.modality.c_str(),
                      r.metrics.mae, r.metrics.rmse, r.metrics.rho);
        out << line;
    }
    return out.str();
}

nlohmann::json to_json(const MetricsReport& r) {
    return {{"mae", r.mae}, {"rmse", r.rmse}, {"rho", r.rho}, {"count", r.count}};
}

void write_plot_csv(const std::string& path, const AlignedSeries& series) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << "time,truth,prediction\n" << std::setprecision(10);
    for (std::size_t i = 0; i < series.size(); ++i)
        out << series.seconds[i] << ',' << series.truth[i] << ',' << series.pred[i] << '\n';
}

}  // namespace quietroom::eval
