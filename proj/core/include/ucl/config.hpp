#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ucl/datasets.hpp"
#include "ucl/trainer.hpp"

namespace ucl {

/// Environment variable naming the directory relative dataset paths resolve
/// against.
inline constexpr const char* kDataRootEnv = "UCL_DATA_ROOT";

enum class Generator { permuted, row_permuted, split, synthetic };

struct DataSpec {
    Generator generator = Generator::permuted;
    /// Directory with the four MNIST IDX files. No default; required by the
    /// MNIST generators and stored resolved (absolute).
    std::filesystem::path mnist_dir;
    int tasks = 10;
    std::uint64_t seed = 0;
    /// Keep only the first n training / test examples (0 keeps all).
    std::size_t train_limit = 0;
    std::size_t test_limit = 0;
    std::vector<std::pair<int, int>> class_pairs = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    int synthetic_per_class = 200;
    int synthetic_dim = 2;

    friend bool operator==(const DataSpec&, const DataSpec&) = default;
};

struct ExperimentConfig {
    std::string name = "ucl";
    std::filesystem::path output_dir = "runs/ucl";
    DataSpec data;
    ModelSpec model;
    TrainConfig train;
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// Parses the sectioned key = value format:
///
///   [experiment] name output_dir
///   [data]       generator mnist_dir tasks seed train_limit test_limit
///                class_pairs synthetic_per_class synthetic_dim
///   [model]      hidden head_mode
///   [train]      method epochs batch_size lr_mu lr_rho adam_beta1 adam_beta2
///                adam_epsilon seed init sigma_init init_ratio
///                sigma_per_epoch normalization
///   [regularizer] beta upper_freeze l1 sigma_relax sigma_term
///
/// Lists are space separated (hidden = 400 400, class_pairs = 0:1 2:3).
/// Unknown sections or keys, malformed values and invalid combinations throw
/// ConfigError. A relative mnist_dir resolves against $UCL_DATA_ROOT when set,
/// else against base_dir; the IDX files must exist.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);

/// Canonical text with every field spelled out; parse_config(echo) == config.
std::string echo_config(const ExperimentConfig& config);

/// Maps full | no-upper-freeze | no-l1 | no-sigma-relax onto the regularizer
/// switches.
void apply_ablation(ExperimentConfig& config, std::string_view ablation);

/// Overrides both the data and the training seed.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

/// Loads the data and builds the task sequence described by config.data.
std::vector<TaskSpec> build_tasks(const DataSpec& data);

/// Resolves a dataset path the way parse_config does.
std::filesystem::path resolve_data_path(const std::filesystem::path& p,
                                        const std::filesystem::path& base_dir);

} // namespace ucl
