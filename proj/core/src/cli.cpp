#include "ucl/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ucl/checkpoint.hpp"
#include "ucl/config.hpp"
#include "ucl/errors.hpp"
#include "ucl/report.hpp"
#include "ucl/trainer.hpp"

namespace ucl {

namespace {

namespace fs = std::filesystem;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string ablation;
    std::string checkpoint;
    std::vector<std::string> reports;
    int task = 0;
};

std::string fmt(double v, const char* spec = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

ExperimentConfig configured(const Options& o) {
    ExperimentConfig c = load_config(o.config);
    if (o.seed) apply_seed(c, *o.seed);
    if (!o.ablation.empty()) apply_ablation(c, o.ablation);
    if (!o.out.empty()) c.output_dir = o.out;
    return c;
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void cmd_train(const Options& o, std::ostream& out) {
    const ExperimentConfig c = configured(o);
    const auto tasks = build_tasks(c.data);
    const SequenceResult result = run_sequence(tasks, c.model, c.train);
    const RunReport report = make_report(c.name, c.train.seed, echo_config(c), result);

    make_dir(c.output_dir);
    atomic_write(c.output_dir / "config.ini", report.config_echo);
    write_report(c.output_dir / "report.json", report);
    atomic_write(c.output_dir / "accuracy.csv", accuracy_csv(report));
    atomic_write(c.output_dir / "sigma.csv", sigma_csv(report));
    write_checkpoint(c.output_dir / "checkpoint", result.network);

    for (std::size_t t = 0; t < report.average.size(); ++t) {
        out << "task " << t + 1 << ": average accuracy " << fmt(report.average[t]) << " ("
            << fmt(report.seconds_per_task[t], "%.1f") << " s)\n";
    }
    out << "wrote " << c.output_dir.string() << "\n";
}

void cmd_init(const Options& o, std::ostream& out) {
    const ExperimentConfig c = configured(o);
    const auto tasks = build_tasks(c.data);
    const Network net = initial_network(tasks, c.model, c.train);
    write_checkpoint(c.output_dir, net);
    out << "wrote " << c.output_dir.string() << "\n";
}

void cmd_eval(const Options& o, std::ostream& out) {
    const ExperimentConfig c = configured(o);
    const Network net = read_checkpoint(o.checkpoint);
    const auto tasks = build_tasks(c.data);
    if (o.task < 1 || o.task > static_cast<int>(tasks.size())) {
        throw ConfigError("eval: --task must lie in [1, " + std::to_string(tasks.size()) + "]");
    }
    const int head = net.mode() == HeadMode::multi ? o.task - 1 : 0;
    const double acc = evaluate(net, head, tasks[static_cast<std::size_t>(o.task - 1)].test);
    out << "task " << o.task << " accuracy " << fmt(acc, "%.17g") << "\n";
}

std::string checkpoint_sigma_csv(const Network& net) {
    std::string csv = "layer,node,sigma\n";
    int layer = 1;
    auto emit = [&](const GaussianNodeLayer& l) {
        const Vector s = l.sigma();
        for (Eigen::Index n = 0; n < s.size(); ++n) {
            csv += std::to_string(layer) + "," + std::to_string(n) + "," + fmt(s[n], "%.17g") + "\n";
        }
        ++layer;
    };
    for (const auto& l : net.shared()) emit(l);
    for (const auto& l : net.heads()) emit(l);
    return csv;
}

void cmd_analyze_sigma(const Options& o, std::ostream& out) {
    if (o.checkpoint.empty() == o.reports.empty()) {
        throw ConfigError("analyze-sigma: give exactly one of --checkpoint or --report");
    }
    std::string nodes;
    std::string hist;
    if (!o.checkpoint.empty()) {
        const Network net = read_checkpoint(o.checkpoint);
        nodes = checkpoint_sigma_csv(net);
        SigmaSnapshot layers;
        for (const auto& l : net.shared()) layers.push_back(l.sigma());
        for (const auto& l : net.heads()) layers.push_back(l.sigma());
        hist = histogram_csv("checkpoint", sigma_histograms({layers}));
    } else {
        if (o.reports.size() != 1) throw ConfigError("analyze-sigma: expects a single --report");
        const RunReport report = read_report(o.reports.front());
        nodes = sigma_csv(report);
        hist = histogram_csv(report.name, history_histograms(report));
    }
    if (o.out.empty()) {
        out << (o.checkpoint.empty() ? hist : nodes);
        return;
    }
    make_dir(o.out);
    atomic_write(fs::path(o.out) / "sigma_nodes.csv", nodes);
    atomic_write(fs::path(o.out) / "sigma_hist.csv", hist);
    out << "wrote " << o.out << "\n";
}

void cmd_export_plots(const Options& o, std::ostream& out) {
    if (o.reports.empty()) throw ConfigError("export-plots: at least one --report is required");
    std::vector<RunReport> reports;
    for (const auto& p : o.reports) reports.push_back(read_report(p));
    const fs::path dir = o.out.empty() ? fs::path(".") : fs::path(o.out);
    make_dir(dir);
    atomic_write(dir / "average_curve.csv", average_curve_csv(reports));
    atomic_write(dir / "retention_curve.csv", retention_curve_csv(reports));
    std::string hist;
    for (const auto& r : reports) {
        if (r.sigma_history.empty()) continue;
        std::string block = histogram_csv(r.name, history_histograms(r));
        if (!hist.empty()) block.erase(0, block.find('\n') + 1);  // one header
        hist += block;
    }
    if (!hist.empty()) atomic_write(dir / "sigma_hist.csv", hist);
    out << "wrote " << dir.string() << "\n";
}

void cmd_gen_tasks(const Options& o, std::ostream& out) {
    const ExperimentConfig c = configured(o);
    const auto tasks = build_tasks(c.data);
    const fs::path dir = c.output_dir;
    make_dir(dir);
    std::string index = "task,description,train_size,test_size,classes,label_map,permutation_file\n";
    for (const auto& t : tasks) {
        std::string map;
        for (std::size_t k = 0; k < t.label_map.size(); ++k) {
            if (t.label_map[k] < 0) continue;
            map += (map.empty() ? "" : " ") + std::to_string(k) + ":" + std::to_string(t.label_map[k]);
        }
        std::string perm_file;
        if (!t.permutation.empty()) {
            perm_file = "task_" + std::to_string(t.id + 1) + "_permutation.txt";
            std::string lines;
            for (int p : t.permutation) lines += std::to_string(p) + "\n";
            atomic_write(dir / perm_file, lines);
        }
        index += std::to_string(t.id + 1) + "," + t.description + "," +
                 std::to_string(t.train.size()) + "," + std::to_string(t.test.size()) + "," +
                 std::to_string(t.train.num_classes) + "," + map + "," + perm_file + "\n";
    }
    atomic_write(dir / "tasks.csv", index);
    out << "wrote " << dir.string() << "\n";
}

} // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Uncertainty-regularized continual learning for fully-connected networks", "ucl"};
    app.require_subcommand(1);
    Options o;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "experiment config file")->required();
        sub->add_option("--seed", o.seed, "overrides the data and training seeds");
    };

    auto* train = app.add_subcommand("train", "run a task sequence and write report, CSVs, checkpoint");
    add_config(train);
    train->add_option("--out", o.out, "output directory (overrides experiment.output_dir)");
    train->add_option("--ablation", o.ablation, "regularizer ablation")
        ->check(CLI::IsMember({"full", "no-upper-freeze", "no-l1", "no-sigma-relax"}));

    auto* init = app.add_subcommand("init", "write the untrained network as a checkpoint");
    add_config(init);
    init->add_option("--out", o.out, "checkpoint directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one task's test set");
    add_config(eval);
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint directory")->required();
    eval->add_option("--task", o.task, "1-based task index")->required();

    auto* analyze = app.add_subcommand("analyze-sigma", "per-node sigma and 50-bin histograms");
    analyze->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
    analyze->add_option("--report", o.reports, "report.json");
    analyze->add_option("--out", o.out, "directory for sigma_nodes.csv and sigma_hist.csv");

    auto* plots = app.add_subcommand("export-plots", "accuracy curves and sigma histograms from reports");
    plots->add_option("--report", o.reports, "report.json (repeatable)")->required();
    plots->add_option("--out", o.out, "output directory");

    auto* gen = app.add_subcommand("gen-tasks", "materialize task permutations and splits");
    add_config(gen);
    gen->add_option("--out", o.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "ucl: usage error: " << e.what() << "\n";
        err << app.help();
        return 2;
    }

    try {
        if (train->parsed()) cmd_train(o, out);
        else if (init->parsed()) cmd_init(o, out);
        else if (eval->parsed()) cmd_eval(o, out);
        else if (analyze->parsed()) cmd_analyze_sigma(o, out);
        else if (plots->parsed()) cmd_export_plots(o, out);
        else if (gen->parsed()) cmd_gen_tasks(o, out);
        return 0;
    } catch (const Error& e) {
        err << "ucl: error[" << e.kind() << "]: " << e.what() << "\n";
    } catch (const std::exception& e) {
        err << "ucl: error[internal]: " << e.what() << "\n";
    }
    return 1;
}

int cli_main(int argc, const char* const* argv) { return cli_main(argc, argv, std::cout, std::cerr); }

} // namespace ucl
