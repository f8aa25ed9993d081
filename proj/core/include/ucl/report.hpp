#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ucl/trainer.hpp"

namespace ucl {

inline constexpr int kReportSchemaVersion = 1;

/// Everything a run produced that the exported series are rendered from.
struct RunReport {
    int schema_version = kReportSchemaVersion;
    std::string name;
    std::uint64_t seed = 0;
    std::string config_echo;
    AccuracyMatrix accuracy;
    std::vector<double> average;  // average[t] = accuracy.average(t)
    /// sigma_history[t][l] = per-node sigma of layer l after task t.
    std::vector<SigmaSnapshot> sigma_history;
    std::vector<double> seconds_per_task;
    /// Per task, per epoch: mean data loss and mean regularizer value.
    std::vector<std::vector<std::pair<double, double>>> epoch_loss;
    /// Per task, per epoch sigma; empty unless sigma_per_epoch was set.
    std::vector<std::vector<SigmaSnapshot>> epoch_sigma;

    friend bool operator==(const RunReport&, const RunReport&);
};

RunReport make_report(const std::string& name, std::uint64_t seed, const std::string& config_echo,
                      const SequenceResult& result);

/// JSON text. Doubles are written in shortest round-trip form, so reading
/// the text back gives bitwise-equal values.
std::string report_to_json(const RunReport& report);
/// Throws FormatError on malformed input and on a schema_version mismatch.
RunReport report_from_json(const std::string& text);

void write_report(const std::filesystem::path& path, const RunReport& report);
RunReport read_report(const std::filesystem::path& path);

/// after_task,eval_task,accuracy with 1-based task indices, one row per
/// populated entry (T(T+1)/2 rows).
std::string accuracy_csv(const RunReport& report);
/// task,layer,node,sigma with 1-based task and layer, 0-based node.
std::string sigma_csv(const RunReport& report);

inline constexpr int kHistogramBins = 50;

/// 50 bins of equal width over [0, hi], hi = largest sigma in the report.
/// A value equal to hi lands in the last bin.
struct HistogramSeries {
    int task = 0;   // 1-based
    int layer = 0;  // 1-based
    double hi = 0.0;
    std::vector<int> counts;
};

/// One series per (task, layer); throws DomainError on an empty history.
std::vector<HistogramSeries> history_histograms(const RunReport& report);
/// Same binning for a single set of layers, e.g. a checkpoint's sigma.
std::vector<HistogramSeries> sigma_histograms(const std::vector<SigmaSnapshot>& history);

/// run,task,layer,bin,lo,hi,count
std::string histogram_csv(const std::string& run, const std::vector<HistogramSeries>& series);
/// run,after_task,average_accuracy: one curve per report.
std::string average_curve_csv(const std::vector<RunReport>& reports);
/// run,after_task,average_accuracy,task1_accuracy: one curve per report.
std::string retention_curve_csv(const std::vector<RunReport>& reports);

} // namespace ucl
