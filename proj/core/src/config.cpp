#include "ucl/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "ucl/checkpoint.hpp"
#include "ucl/errors.hpp"

namespace ucl {

namespace {

namespace fs = std::filesystem;

// Shortest %g form that reads back to the same double.
std::string fmt_double(double v) {
    char buf[32];
    for (int precision = 1; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

struct Entry {
    std::vector<std::string> values;
};

// section -> key -> values, with unknown-key detection on the way out.
class Table {
public:
    explicit Table(std::string_view text) {
        std::istringstream in{std::string(text)};
        std::vector<CLI::ConfigItem> items;
        try {
            items = CLI::ConfigINI().from_config(in);
        } catch (const CLI::Error& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        for (auto& item : items) {
            if (item.name == "++" || item.name == "--") continue;
            if (item.parents.size() != 1) {
                throw ConfigError("config: key '" + item.fullname() + "' is outside a section");
            }
            auto& section = sections_[item.parents[0]];
            if (section.count(item.name)) {
                throw ConfigError("config: duplicate key '" + item.fullname() + "'");
            }
            section[item.name] = Entry{std::move(item.inputs)};
        }
    }

    const Entry* find(const std::string& section, const std::string& key) {
        auto s = sections_.find(section);
        if (s == sections_.end()) return nullptr;
        auto k = s->second.find(key);
        if (k == s->second.end()) return nullptr;
        used_.insert(section + "." + key);
        return &k->second;
    }

    void reject_unused() const {
        for (const auto& [section, keys] : sections_) {
            for (const auto& [key, entry] : keys) {
                if (!used_.count(section + "." + key)) {
                    throw ConfigError("config: unknown key '" + section + "." + key + "'");
                }
            }
        }
    }

private:
    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::set<std::string> used_;
};

std::string single(const Entry& e, const std::string& key) {
    if (e.values.size() != 1) throw ConfigError("config: '" + key + "' expects a single value");
    return e.values[0];
}

template <class T>
T parse_number(const std::string& s, const std::string& key) {
    T value{};
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("config: '" + key + "' = '" + s + "' is not a valid number");
    }
    return value;
}

double parse_real(const std::string& s, const std::string& key) {
    // from_chars for double is missing in older libstdc++; strtod is locale
    // dependent but the CLI never changes the locale.
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw ConfigError("config: '" + key + "' = '" + s + "' is not a valid number");
    }
    return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + s + "'");
}

template <class E>
E parse_enum(const std::string& s, const std::string& key,
             std::initializer_list<std::pair<const char*, E>> names) {
    std::string allowed;
    for (const auto& [name, value] : names) {
        if (s == name) return value;
        allowed += allowed.empty() ? name : std::string(" | ") + name;
    }
    throw ConfigError("config: '" + key + "' = '" + s + "', expected " + allowed);
}

const char* generator_name(Generator g) {
    switch (g) {
    case Generator::permuted: return "permuted";
    case Generator::row_permuted: return "row_permuted";
    case Generator::split: return "split";
    case Generator::synthetic: return "synthetic";
    }
    return "?";
}

bool needs_mnist(Generator g) { return g != Generator::synthetic; }

} // namespace

fs::path resolve_data_path(const fs::path& p, const fs::path& base_dir) {
    if (p.is_absolute()) return p.lexically_normal();
    if (const char* root = std::getenv(kDataRootEnv); root != nullptr && *root != '\0') {
        return fs::absolute(fs::path(root) / p).lexically_normal();
    }
    return fs::absolute(base_dir / p).lexically_normal();
}

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
    Table table(text);
    ExperimentConfig c;

    auto get = [&](const char* section, const char* key, auto&& assign) {
        const std::string full = std::string(section) + "." + key;
        if (const Entry* e = table.find(section, key)) assign(*e, full);
    };
    auto str = [](std::string& out) {
        return [&out](const Entry& e, const std::string& k) { out = single(e, k); };
    };
    auto integer = [](auto& out) {
        return [&out](const Entry& e, const std::string& k) {
            out = parse_number<std::remove_reference_t<decltype(out)>>(single(e, k), k);
        };
    };
    auto real = [](double& out) {
        return [&out](const Entry& e, const std::string& k) { out = parse_real(single(e, k), k); };
    };
    auto boolean = [](bool& out) {
        return [&out](const Entry& e, const std::string& k) { out = parse_bool(single(e, k), k); };
    };

    get("experiment", "name", str(c.name));
    std::string output_dir = c.output_dir.string();
    get("experiment", "output_dir", str(output_dir));
    c.output_dir = output_dir;

    DataSpec& d = c.data;
    get("data", "generator", [&](const Entry& e, const std::string& k) {
        d.generator = parse_enum<Generator>(single(e, k), k,
                                            {{"permuted", Generator::permuted},
                                             {"row_permuted", Generator::row_permuted},
                                             {"split", Generator::split},
                                             {"synthetic", Generator::synthetic}});
    });
    std::string mnist_dir;
    get("data", "mnist_dir", str(mnist_dir));
    get("data", "tasks", integer(d.tasks));
    get("data", "seed", integer(d.seed));
    get("data", "train_limit", integer(d.train_limit));
    get("data", "test_limit", integer(d.test_limit));
    get("data", "class_pairs", [&](const Entry& e, const std::string& k) {
        d.class_pairs.clear();
        for (const auto& v : e.values) {
            const auto colon = v.find(':');
            if (colon == std::string::npos) {
                throw ConfigError("config: '" + k + "' entries look like 0:1, got '" + v + "'");
            }
            d.class_pairs.emplace_back(parse_number<int>(v.substr(0, colon), k),
                                       parse_number<int>(v.substr(colon + 1), k));
        }
    });
    get("data", "synthetic_per_class", integer(d.synthetic_per_class));
    get("data", "synthetic_dim", integer(d.synthetic_dim));

    get("model", "hidden", [&](const Entry& e, const std::string& k) {
        c.model.hidden.clear();
        for (const auto& v : e.values) {
            if (v.empty()) continue;
            c.model.hidden.push_back(parse_number<int>(v, k));
        }
    });
    TrainConfig& t = c.train;
    get("model", "head_mode", [&](const Entry& e, const std::string& k) {
        t.head_mode = parse_enum<HeadMode>(single(e, k), k,
                                           {{"single", HeadMode::single}, {"multi", HeadMode::multi}});
    });

    get("train", "method", [&](const Entry& e, const std::string& k) {
        t.method = parse_enum<Method>(single(e, k), k,
                                      {{"ucl", Method::ucl}, {"finetune", Method::finetune}});
    });
    get("train", "epochs", integer(t.epochs));
    get("train", "batch_size", integer(t.batch_size));
    get("train", "lr_mu", real(t.lr_mu));
    get("train", "lr_rho", real(t.lr_rho));
    get("train", "adam_beta1", real(t.adam.beta1));
    get("train", "adam_beta2", real(t.adam.beta2));
    get("train", "adam_epsilon", real(t.adam.epsilon));
    get("train", "seed", integer(t.seed));
    get("train", "init", [&](const Entry& e, const std::string& k) {
        t.init.kind = parse_enum<InitScheme::Kind>(
            single(e, k), k,
            {{"constant", InitScheme::Kind::constant}, {"adaptive", InitScheme::Kind::adaptive}});
    });
    get("train", "sigma_init", real(t.init.sigma_init));
    get("train", "init_ratio", real(t.init.ratio));
    get("train", "sigma_per_epoch", boolean(t.capture_sigma_per_epoch));
    get("train", "normalization", [&](const Entry& e, const std::string& k) {
        t.normalization = parse_enum<RegularizerNormalization>(
            single(e, k), k,
            {{"per_batch", RegularizerNormalization::per_batch},
             {"none", RegularizerNormalization::none}});
    });

    RegularizerConfig& r = t.regularizer;
    get("regularizer", "beta", real(r.beta));
    get("regularizer", "upper_freeze", boolean(r.enable_upper_freeze));
    get("regularizer", "l1", boolean(r.enable_l1));
    get("regularizer", "sigma_relax", boolean(r.enable_sigma_relax));
    get("regularizer", "sigma_term", [&](const Entry& e, const std::string& k) {
        r.sigma_accounting = parse_enum<SigmaAccounting>(
            single(e, k), k,
            {{"per_node", SigmaAccounting::per_node}, {"per_weight", SigmaAccounting::per_weight}});
    });

    table.reject_unused();

    if (c.name.empty()) throw ConfigError("config: experiment.name must not be empty");
    if (d.tasks < 1) throw ConfigError("config: data.tasks must be >= 1");
    for (int h : c.model.hidden) {
        if (h < 1) throw ConfigError("config: model.hidden widths must be >= 1");
    }
    if (d.generator == Generator::split &&
        static_cast<std::size_t>(d.tasks) > d.class_pairs.size()) {
        throw ConfigError("config: data.tasks exceeds the number of class_pairs");
    }
    if (d.generator == Generator::synthetic && (d.synthetic_per_class < 1 || d.synthetic_dim < 1)) {
        throw ConfigError("config: synthetic_per_class and synthetic_dim must be >= 1");
    }
    t.validate();

    if (needs_mnist(d.generator)) {
        if (mnist_dir.empty()) {
            throw ConfigError(std::string("config: data.mnist_dir is required for generator ") +
                              generator_name(d.generator));
        }
        d.mnist_dir = resolve_data_path(mnist_dir, base_dir);
        if (!MnistFiles::in(d.mnist_dir).exist()) {
            throw ConfigError("config: MNIST IDX files not found in " + d.mnist_dir.string());
        }
    } else if (!mnist_dir.empty()) {
        d.mnist_dir = resolve_data_path(mnist_dir, base_dir);
    }
    return c;
}

ExperimentConfig load_config(const fs::path& file) {
    if (!fs::exists(file)) throw IoError("config file not found: " + file.string());
    return parse_config(read_file(file), fs::absolute(file).parent_path());
}

std::string echo_config(const ExperimentConfig& c) {
    std::ostringstream o;
    auto quoted = [](const std::string& s) { return "\"" + s + "\""; };
    const auto& d = c.data;
    const auto& t = c.train;
    const auto& r = t.regularizer;

    o << "[experiment]\n";
    o << "name = " << quoted(c.name) << "\n";
    o << "output_dir = " << quoted(c.output_dir.string()) << "\n";
    o << "\n[data]\n";
    o << "generator = " << generator_name(d.generator) << "\n";
    if (!d.mnist_dir.empty()) o << "mnist_dir = " << quoted(d.mnist_dir.string()) << "\n";
    o << "tasks = " << d.tasks << "\n";
    o << "seed = " << d.seed << "\n";
    o << "train_limit = " << d.train_limit << "\n";
    o << "test_limit = " << d.test_limit << "\n";
    o << "class_pairs =";
    for (const auto& [a, b] : d.class_pairs) o << " " << a << ":" << b;
    o << "\n";
    o << "synthetic_per_class = " << d.synthetic_per_class << "\n";
    o << "synthetic_dim = " << d.synthetic_dim << "\n";
    o << "\n[model]\n";
    o << "hidden =";
    for (int h : c.model.hidden) o << " " << h;
    o << "\n";
    o << "head_mode = " << (t.head_mode == HeadMode::single ? "single" : "multi") << "\n";
    o << "\n[train]\n";
    o << "method = " << (t.method == Method::ucl ? "ucl" : "finetune") << "\n";
    o << "epochs = " << t.epochs << "\n";
    o << "batch_size = " << t.batch_size << "\n";
    o << "lr_mu = " << fmt_double(t.lr_mu) << "\n";
    o << "lr_rho = " << fmt_double(t.lr_rho) << "\n";
    o << "adam_beta1 = " << fmt_double(t.adam.beta1) << "\n";
    o << "adam_beta2 = " << fmt_double(t.adam.beta2) << "\n";
    o << "adam_epsilon = " << fmt_double(t.adam.epsilon) << "\n";
    o << "seed = " << t.seed << "\n";
    o << "init = " << (t.init.kind == InitScheme::Kind::constant ? "constant" : "adaptive") << "\n";
    o << "sigma_init = " << fmt_double(t.init.sigma_init) << "\n";
    o << "init_ratio = " << fmt_double(t.init.ratio) << "\n";
    o << "sigma_per_epoch = " << (t.capture_sigma_per_epoch ? "true" : "false") << "\n";
    o << "normalization = "
      << (t.normalization == RegularizerNormalization::per_batch ? "per_batch" : "none") << "\n";
    o << "\n[regularizer]\n";
    o << "beta = " << fmt_double(r.beta) << "\n";
    o << "upper_freeze = " << (r.enable_upper_freeze ? "true" : "false") << "\n";
    o << "l1 = " << (r.enable_l1 ? "true" : "false") << "\n";
    o << "sigma_relax = " << (r.enable_sigma_relax ? "true" : "false") << "\n";
    o << "sigma_term = "
      << (r.sigma_accounting == SigmaAccounting::per_node ? "per_node" : "per_weight") << "\n";
    return o.str();
}

// The echo spells out every parsed field at full precision.
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return echo_config(a) == echo_config(b);
}

void apply_ablation(ExperimentConfig& config, std::string_view ablation) {
    auto& r = config.train.regularizer;
    r.enable_upper_freeze = true;
    r.enable_l1 = true;
    r.enable_sigma_relax = true;
    if (ablation == "full") return;
    if (ablation == "no-upper-freeze") {
        r.enable_upper_freeze = false;
    } else if (ablation == "no-l1") {
        r.enable_l1 = false;
    } else if (ablation == "no-sigma-relax") {
        r.enable_sigma_relax = false;
    } else {
        throw ConfigError("unknown ablation '" + std::string(ablation) +
                          "', expected full | no-upper-freeze | no-l1 | no-sigma-relax");
    }
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
    config.data.seed = seed;
    config.train.seed = seed;
}

std::vector<TaskSpec> build_tasks(const DataSpec& d) {
    if (d.generator == Generator::synthetic) {
        return synthetic_gaussian_tasks(d.tasks, d.synthetic_per_class, d.synthetic_dim, d.seed);
    }
    const auto files = MnistFiles::in(d.mnist_dir);
    if (!files.exist()) throw IoError("MNIST IDX files not found in " + d.mnist_dir.string());
    const auto train = load_idx(files.train_images, files.train_labels).head(d.train_limit);
    const auto test = load_idx(files.test_images, files.test_labels).head(d.test_limit);
    switch (d.generator) {
    case Generator::permuted:
        return make_permuted_tasks(train, test, d.tasks, d.seed, PermutationMode::full);
    case Generator::row_permuted:
        return make_permuted_tasks(train, test, d.tasks, d.seed, PermutationMode::row);
    case Generator::split: {
        std::vector<std::pair<int, int>> pairs(d.class_pairs.begin(),
                                               d.class_pairs.begin() + d.tasks);
        return make_split_tasks(train, test, pairs);
    }
    case Generator::synthetic: break;
    }
    return {};
}

} // namespace ucl
