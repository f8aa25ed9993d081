#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ucl/errors.hpp"
#include "ucl/meanfield_net.hpp"

namespace ucl {

/// Row-per-example feature matrix with integer labels in [0, num_classes).
/// Image data is scaled to [0, 1]; synthetic fixtures hold unbounded reals.
struct LabeledDataset {
    Matrix images;
    std::vector<int> labels;
    int num_classes = 0;
    int rows = 0;  // image geometry, 0 when not an image
    int cols = 0;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] int dim() const { return static_cast<int>(images.cols()); }

    /// First n examples (all when n is 0 or exceeds the size).
    [[nodiscard]] LabeledDataset head(std::size_t n) const;
    /// Examples at the given indices, in that order.
    [[nodiscard]] LabeledDataset select(std::span<const std::size_t> indices) const;
};

struct TaskSpec {
    int id = 0;  // 0-based position in the sequence
    LabeledDataset train;
    LabeledDataset test;
    /// original class -> head-local label, -1 for classes not in the task
    std::vector<int> label_map;
    /// pixel permutation applied to every image (empty: none). Output pixel
    /// k is input pixel permutation[k].
    std::vector<int> permutation;
    std::string description;
};

// --- IDX --------------------------------------------------------------------

class IdxError : public FormatError {
public:
    enum class Reason { wrong_magic, truncated, count_mismatch };

    IdxError(Reason reason, std::string field, const std::string& what)
        : FormatError(reason_tag(reason), what), reason_(reason), field_(std::move(field)) {}

    [[nodiscard]] Reason reason() const { return reason_; }
    /// The offending header field or file, e.g. "images.magic".
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    static std::string reason_tag(Reason r);
    Reason reason_;
    std::string field_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Parsed IDX image file: pixel bytes scaled by 1/255.
struct IdxImages {
    Matrix pixels;
    int rows = 0;
    int cols = 0;
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

/// Inverse of the parsers; pixel values are rounded back to bytes.
std::vector<std::uint8_t> serialize_idx_images(const Matrix& pixels, int rows, int cols);
std::vector<std::uint8_t> serialize_idx_labels(std::span<const int> labels);

/// Loads an image/label file pair. num_classes is max label + 1.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// Standard MNIST file names inside a directory.
struct MnistFiles {
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    static MnistFiles in(const std::filesystem::path& dir);
    [[nodiscard]] bool exist() const;
};

// --- task generators ---------------------------------------------------------

enum class PermutationMode { full, row };

/// Task 0 is the identity; tasks 1..T-1 apply independent seeded uniform
/// permutations of all pixels (full) or of image rows (row), identically to
/// train and test. Single shared label space.
std::vector<TaskSpec> make_permuted_tasks(const LabeledDataset& train, const LabeledDataset& test,
                                          int num_tasks, std::uint64_t seed, PermutationMode mode);

/// Pixel permutation for one task; exposed for auditing and tests.
std::vector<int> task_permutation(int rows, int cols, int task, std::uint64_t seed,
                                  PermutationMode mode);

/// One task per class pair; labels remapped to {0, 1} in pair order.
/// Throws ConfigError on overlapping pairs or classes absent from the data.
std::vector<TaskSpec> make_split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                                       std::span<const std::pair<int, int>> class_pairs);

/// Two Gaussian blobs per task with unit variance and centres 6 standard
/// deviations apart; n_per_class examples per class in both train and test.
std::vector<TaskSpec> synthetic_gaussian_tasks(int num_tasks, int n_per_class, int dim,
                                               std::uint64_t seed);

} // namespace ucl
