#include "ucl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "ucl/checkpoint.hpp"
#include "ucl/errors.hpp"

namespace ucl {

namespace {

using nlohmann::json;

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

json vector_json(const Vector& v) {
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

bool same_snapshot(const SigmaSnapshot& x, const SigmaSnapshot& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t l = 0; l < x.size(); ++l) {
        if (x[l].size() != y[l].size() || x[l] != y[l]) return false;
    }
    return true;
}

json snapshot_json(const SigmaSnapshot& snap) {
    json layers = json::array();
    for (const auto& v : snap) layers.push_back(vector_json(v));
    return layers;
}

SigmaSnapshot snapshot_from_json(const json& j) {
    SigmaSnapshot s;
    for (const auto& layer : j) {
        const auto v = layer.get<std::vector<double>>();
        s.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    return s;
}

} // namespace

bool operator==(const RunReport& a, const RunReport& b) {
    if (a.schema_version != b.schema_version || a.name != b.name || a.seed != b.seed ||
        a.config_echo != b.config_echo || !(a.accuracy == b.accuracy) || a.average != b.average ||
        a.seconds_per_task != b.seconds_per_task || a.epoch_loss != b.epoch_loss ||
        a.sigma_history.size() != b.sigma_history.size() ||
        a.epoch_sigma.size() != b.epoch_sigma.size()) {
        return false;
    }
    for (std::size_t t = 0; t < a.sigma_history.size(); ++t) {
        if (!same_snapshot(a.sigma_history[t], b.sigma_history[t])) return false;
    }
    for (std::size_t t = 0; t < a.epoch_sigma.size(); ++t) {
        if (a.epoch_sigma[t].size() != b.epoch_sigma[t].size()) return false;
        for (std::size_t e = 0; e < a.epoch_sigma[t].size(); ++e) {
            if (!same_snapshot(a.epoch_sigma[t][e], b.epoch_sigma[t][e])) return false;
        }
    }
    return true;
}

RunReport make_report(const std::string& name, std::uint64_t seed, const std::string& config_echo,
                      const SequenceResult& result) {
    RunReport r;
    r.name = name;
    r.seed = seed;
    r.config_echo = config_echo;
    r.accuracy = result.accuracy;
    for (int t = 0; t < r.accuracy.tasks(); ++t) r.average.push_back(r.accuracy.average(t));
    r.sigma_history = result.sigma_history;
    r.seconds_per_task = result.seconds_per_task;
    bool per_epoch_sigma = false;
    for (const auto& log : result.logs) {
        auto& losses = r.epoch_loss.emplace_back();
        for (const auto& e : log.epochs) {
            losses.emplace_back(e.data_loss, e.regularizer);
            per_epoch_sigma = per_epoch_sigma || !e.sigma.empty();
        }
    }
    if (per_epoch_sigma) {
        for (const auto& log : result.logs) {
            auto& task = r.epoch_sigma.emplace_back();
            for (const auto& e : log.epochs) task.push_back(e.sigma);
        }
    }
    return r;
}

std::string report_to_json(const RunReport& r) {
    json j;
    j["schema_version"] = r.schema_version;
    j["name"] = r.name;
    j["seed"] = r.seed;
    j["config"] = r.config_echo;
    json rows = json::array();
    for (int t = 0; t < r.accuracy.tasks(); ++t) {
        const auto& row = r.accuracy.row(t);
        rows.push_back(std::vector<double>(row.begin(), row.begin() + r.accuracy.populated(t)));
    }
    j["accuracy"] = rows;
    j["average_accuracy"] = r.average;
    json hist = json::array();
    for (const auto& snap : r.sigma_history) hist.push_back(snapshot_json(snap));
    j["sigma_history"] = hist;
    j["seconds_per_task"] = r.seconds_per_task;
    json losses = json::array();
    for (const auto& task : r.epoch_loss) {
        json epochs = json::array();
        for (const auto& [data, reg] : task) epochs.push_back({data, reg});
        losses.push_back(epochs);
    }
    j["epoch_loss"] = losses;
    json epoch_sigma = json::array();
    for (const auto& task : r.epoch_sigma) {
        json epochs = json::array();
        for (const auto& snap : task) epochs.push_back(snapshot_json(snap));
        epoch_sigma.push_back(epochs);
    }
    j["epoch_sigma"] = epoch_sigma;
    return j.dump(1) + "\n";
}

RunReport report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("report: ") + e.what());
    }
    try {
        RunReport r;
        r.schema_version = j.at("schema_version").get<int>();
        if (r.schema_version != kReportSchemaVersion) {
            throw FormatError("schema-version", "report: schema_version " +
                                                    std::to_string(r.schema_version) +
                                                    " is not supported (expected " +
                                                    std::to_string(kReportSchemaVersion) + ")");
        }
        r.name = j.at("name").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config_echo = j.at("config").get<std::string>();
        const auto& rows = j.at("accuracy");
        r.accuracy = AccuracyMatrix(static_cast<int>(rows.size()));
        for (std::size_t t = 0; t < rows.size(); ++t) {
            const auto row = rows[t].get<std::vector<double>>();
            if (row.size() > t + 1) throw FormatError("report: accuracy row longer than its task");
            for (std::size_t i = 0; i < row.size(); ++i) {
                r.accuracy.set(static_cast<int>(t), static_cast<int>(i), row[i]);
            }
        }
        r.average = j.at("average_accuracy").get<std::vector<double>>();
        for (const auto& snap : j.at("sigma_history")) {
            r.sigma_history.push_back(snapshot_from_json(snap));
        }
        r.seconds_per_task = j.at("seconds_per_task").get<std::vector<double>>();
        for (const auto& task : j.at("epoch_loss")) {
            auto& losses = r.epoch_loss.emplace_back();
            for (const auto& e : task) losses.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
        }
        for (const auto& task : j.at("epoch_sigma")) {
            auto& epochs = r.epoch_sigma.emplace_back();
            for (const auto& snap : task) epochs.push_back(snapshot_from_json(snap));
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(std::string("report: ") + e.what());
    }
}

void write_report(const std::filesystem::path& path, const RunReport& report) {
    atomic_write(path, report_to_json(report));
}

RunReport read_report(const std::filesystem::path& path) {
    return report_from_json(read_file(path));
}

std::string accuracy_csv(const RunReport& r) {
    std::string out = "after_task,eval_task,accuracy\n";
    for (int t = 0; t < r.accuracy.tasks(); ++t) {
        for (int i = 0; i < r.accuracy.populated(t); ++i) {
            out += std::to_string(t + 1) + "," + std::to_string(i + 1) + "," +
                   fmt17(r.accuracy.at(t, i)) + "\n";
        }
    }
    return out;
}

std::string sigma_csv(const RunReport& r) {
    std::string out = "task,layer,node,sigma\n";
    for (std::size_t t = 0; t < r.sigma_history.size(); ++t) {
        for (std::size_t l = 0; l < r.sigma_history[t].size(); ++l) {
            const auto& v = r.sigma_history[t][l];
            for (Eigen::Index n = 0; n < v.size(); ++n) {
                out += std::to_string(t + 1) + "," + std::to_string(l + 1) + "," + std::to_string(n) +
                       "," + fmt17(v[n]) + "\n";
            }
        }
    }
    return out;
}

std::vector<HistogramSeries> sigma_histograms(const std::vector<SigmaSnapshot>& history) {
    double hi = 0.0;
    bool any = false;
    for (const auto& snap : history) {
        for (const auto& v : snap) {
            if (v.size() == 0) continue;
            hi = std::max(hi, v.maxCoeff());
            any = true;
        }
    }
    if (!any) throw DomainError("sigma histogram: no sigma values recorded");

    std::vector<HistogramSeries> out;
    for (std::size_t t = 0; t < history.size(); ++t) {
        for (std::size_t l = 0; l < history[t].size(); ++l) {
            HistogramSeries s;
            s.task = static_cast<int>(t) + 1;
            s.layer = static_cast<int>(l) + 1;
            s.hi = hi;
            s.counts.assign(kHistogramBins, 0);
            for (double x : history[t][l]) {
                int bin = hi > 0.0 ? static_cast<int>(std::floor(x / hi * kHistogramBins))
                                   : kHistogramBins - 1;
                bin = std::clamp(bin, 0, kHistogramBins - 1);
                ++s.counts[bin];
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<HistogramSeries> history_histograms(const RunReport& report) {
    if (report.sigma_history.empty()) throw DomainError("sigma histogram: report has no sigma history");
    return sigma_histograms(report.sigma_history);
}

std::string histogram_csv(const std::string& run, const std::vector<HistogramSeries>& series) {
    std::string out = "run,task,layer,bin,lo,hi,count\n";
    for (const auto& s : series) {
        const double width = s.hi / kHistogramBins;
        for (int b = 0; b < kHistogramBins; ++b) {
            out += run + "," + std::to_string(s.task) + "," + std::to_string(s.layer) + "," + std::to_string(b) +
                   "," + fmt17(width * b) + "," + fmt17(width * (b + 1)) + "," +
                   std::to_string(s.counts[b]) + "\n";
        }
    }
    return out;
}

std::string average_curve_csv(const std::vector<RunReport>& reports) {
    std::string out = "run,after_task,average_accuracy\n";
    for (const auto& r : reports) {
        for (std::size_t t = 0; t < r.average.size(); ++t) {
            out += r.name + "," + std::to_string(t + 1) + "," + fmt17(r.average[t]) + "\n";
        }
    }
    return out;
}

std::string retention_curve_csv(const std::vector<RunReport>& reports) {
    std::string out = "run,after_task,average_accuracy,task1_accuracy\n";
    for (const auto& r : reports) {
        for (int t = 0; t < r.accuracy.tasks(); ++t) {
            if (r.accuracy.populated(t) == 0) continue;
            out += r.name + "," + std::to_string(t + 1) + "," + fmt17(r.accuracy.average(t)) + "," +
                   fmt17(r.accuracy.at(t, 0)) + "\n";
        }
    }
    return out;
}

} // namespace ucl
