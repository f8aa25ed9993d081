#include "ucl/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <set>

#include "ucl/rng.hpp"

namespace ucl {

namespace fs = std::filesystem;

namespace {

constexpr int kSyntheticSeparation = 6;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
           (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
           (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
           static_cast<std::uint32_t>(bytes[offset + 3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

void require_header(std::span<const std::uint8_t> bytes, std::size_t needed, const char* file) {
    if (bytes.size() < needed) {
        throw IdxError(IdxError::Reason::truncated, std::string(file) + ".header",
                       std::string("IDX ") + file + " file truncated: header needs " +
                           std::to_string(needed) + " bytes, file has " +
                           std::to_string(bytes.size()));
    }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int count_classes(const std::vector<int>& labels) {
    int max_label = -1;
    for (int y : labels) max_label = std::max(max_label, y);
    return max_label + 1;
}

LabeledDataset permute_pixels(const LabeledDataset& base, const std::vector<int>& perm) {
    LabeledDataset out = base;
    for (Eigen::Index r = 0; r < base.images.rows(); ++r) {
        for (std::size_t k = 0; k < perm.size(); ++k) {
            out.images(r, static_cast<Eigen::Index>(k)) = base.images(r, perm[k]);
        }
    }
    return out;
}

} // namespace

std::string IdxError::reason_tag(Reason r) {
    switch (r) {
        case Reason::wrong_magic: return "idx-wrong-magic";
        case Reason::truncated: return "idx-truncated";
        case Reason::count_mismatch: return "idx-count-mismatch";
    }
    return "idx";
}

// --- LabeledDataset -----------------------------------------------------------

LabeledDataset LabeledDataset::head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    LabeledDataset out;
    out.images = images.topRows(static_cast<Eigen::Index>(n));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    out.num_classes = num_classes;
    out.rows = rows;
    out.cols = cols;
    return out;
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.images.resize(static_cast<Eigen::Index>(indices.size()), images.cols());
    out.labels.reserve(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        out.images.row(static_cast<Eigen::Index>(k)) = images.row(static_cast<Eigen::Index>(indices[k]));
        out.labels.push_back(labels[indices[k]]);
    }
    out.num_classes = num_classes;
    out.rows = rows;
    out.cols = cols;
    return out;
}

// --- IDX ------------------------------------------------------------------------

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    require_header(bytes, 4, "images");
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxImageMagic) {
        throw IdxError(IdxError::Reason::wrong_magic, "images.magic",
                       "IDX images file: wrong magic " + hex32(magic) + ", expected " +
                           hex32(kIdxImageMagic));
    }
    require_header(bytes, 16, "images");
    const std::uint32_t count = read_be32(bytes, 4);
    const std::uint32_t rows = read_be32(bytes, 8);
    const std::uint32_t cols = read_be32(bytes, 12);
    const std::uint64_t pixels = static_cast<std::uint64_t>(rows) * cols;
    const std::uint64_t needed = 16 + static_cast<std::uint64_t>(count) * pixels;
    if (bytes.size() < needed) {
        throw IdxError(IdxError::Reason::truncated, "images.data",
                       "IDX images file truncated: " + std::to_string(count) + " images of " +
                           std::to_string(rows) + "x" + std::to_string(cols) + " need " +
                           std::to_string(needed) + " bytes, file has " +
                           std::to_string(bytes.size()));
    }
    IdxImages out;
    out.rows = static_cast<int>(rows);
    out.cols = static_cast<int>(cols);
    out.pixels.resize(count, static_cast<Eigen::Index>(pixels));
    const std::uint8_t* data = bytes.data() + 16;
    double* dst = out.pixels.data();  // row-major: same order as the file
    for (std::uint64_t k = 0; k < static_cast<std::uint64_t>(count) * pixels; ++k) {
        dst[k] = static_cast<double>(data[k]) / 255.0;
    }
    return out;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    require_header(bytes, 4, "labels");
    const std::uint32_t magic = read_be32(bytes, 0);
    if (magic != kIdxLabelMagic) {
        throw IdxError(IdxError::Reason::wrong_magic, "labels.magic",
                       "IDX labels file: wrong magic " + hex32(magic) + ", expected " +
                           hex32(kIdxLabelMagic));
    }
    require_header(bytes, 8, "labels");
    const std::uint32_t count = read_be32(bytes, 4);
    if (bytes.size() < 8 + static_cast<std::uint64_t>(count)) {
        throw IdxError(IdxError::Reason::truncated, "labels.data",
                       "IDX labels file truncated: " + std::to_string(count) +
                           " labels need " + std::to_string(8 + static_cast<std::uint64_t>(count)) +
                           " bytes, file has " + std::to_string(bytes.size()));
    }
    return {bytes.begin() + 8, bytes.begin() + 8 + count};
}

std::vector<std::uint8_t> serialize_idx_images(const Matrix& pixels, int rows, int cols) {
    if (static_cast<Eigen::Index>(rows) * cols != pixels.cols()) {
        throw ShapeError("serialize_idx_images: geometry does not match pixel count");
    }
    std::vector<std::uint8_t> out;
    out.reserve(16 + static_cast<std::size_t>(pixels.size()));
    write_be32(out, kIdxImageMagic);
    write_be32(out, static_cast<std::uint32_t>(pixels.rows()));
    write_be32(out, static_cast<std::uint32_t>(rows));
    write_be32(out, static_cast<std::uint32_t>(cols));
    const double* src = pixels.data();
    for (Eigen::Index k = 0; k < pixels.size(); ++k) {
        const double v = std::clamp(std::round(src[k] * 255.0), 0.0, 255.0);
        out.push_back(static_cast<std::uint8_t>(v));
    }
    return out;
}

std::vector<std::uint8_t> serialize_idx_labels(std::span<const int> labels) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + labels.size());
    write_be32(out, kIdxLabelMagic);
    write_be32(out, static_cast<std::uint32_t>(labels.size()));
    for (int y : labels) {
        if (y < 0 || y > 255) throw ShapeError("serialize_idx_labels: label out of byte range");
        out.push_back(static_cast<std::uint8_t>(y));
    }
    return out;
}

LabeledDataset load_idx(const fs::path& images_path, const fs::path& labels_path) {
    const auto image_bytes = read_bytes(images_path);
    const auto label_bytes = read_bytes(labels_path);
    IdxImages images = parse_idx_images(image_bytes);
    std::vector<int> labels = parse_idx_labels(label_bytes);
    if (static_cast<Eigen::Index>(labels.size()) != images.pixels.rows()) {
        throw IdxError(IdxError::Reason::count_mismatch, "labels.count",
                       "IDX count mismatch: " + std::to_string(images.pixels.rows()) +
                           " images in " + images_path.string() + " but " +
                           std::to_string(labels.size()) + " labels in " + labels_path.string());
    }
    if (labels.empty()) {
        throw IdxError(IdxError::Reason::count_mismatch, "images.count",
                       "IDX dataset is empty: " + images_path.string());
    }
    LabeledDataset ds;
    ds.images = std::move(images.pixels);
    ds.rows = images.rows;
    ds.cols = images.cols;
    ds.num_classes = count_classes(labels);
    ds.labels = std::move(labels);
    return ds;
}

MnistFiles MnistFiles::in(const fs::path& dir) {
    return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte",
            dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"};
}

bool MnistFiles::exist() const {
    return fs::exists(train_images) && fs::exists(train_labels) && fs::exists(test_images) &&
           fs::exists(test_labels);
}

// --- permuted tasks ----------------------------------------------------------------

std::vector<int> task_permutation(int rows, int cols, int task, std::uint64_t seed,
                                  PermutationMode mode) {
    const int n = rows * cols;
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    if (task == 0) return perm;

    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(task)));
    if (mode == PermutationMode::full) {
        rng.shuffle(std::span<int>(perm));
        return perm;
    }
    std::vector<int> row_order(static_cast<std::size_t>(rows));
    std::iota(row_order.begin(), row_order.end(), 0);
    rng.shuffle(std::span<int>(row_order));
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            perm[static_cast<std::size_t>(r * cols + c)] = row_order[static_cast<std::size_t>(r)] * cols + c;
        }
    }
    return perm;
}

std::vector<TaskSpec> make_permuted_tasks(const LabeledDataset& train, const LabeledDataset& test,
                                          int num_tasks, std::uint64_t seed, PermutationMode mode) {
    if (num_tasks < 1) throw ConfigError("permuted tasks: need at least one task");
    if (train.dim() != test.dim()) throw ConfigError("permuted tasks: train/test widths differ");
    int rows = train.rows;
    int cols = train.cols;
    if (rows * cols != train.dim()) {
        if (mode == PermutationMode::row) {
            throw ConfigError("row permutation needs image geometry");
        }
        rows = 1;
        cols = train.dim();
    }
    const int classes = std::max(train.num_classes, test.num_classes);
    std::vector<int> label_map(static_cast<std::size_t>(classes));
    std::iota(label_map.begin(), label_map.end(), 0);

    std::vector<TaskSpec> tasks;
    for (int t = 0; t < num_tasks; ++t) {
        TaskSpec task;
        task.id = t;
        task.permutation = task_permutation(rows, cols, t, seed, mode);
        if (t == 0) {
            task.train = train;
            task.test = test;
        } else {
            task.train = permute_pixels(train, task.permutation);
            task.test = permute_pixels(test, task.permutation);
        }
        task.train.num_classes = task.test.num_classes = classes;
        task.label_map = label_map;
        task.description = t == 0 ? "identity"
                                   : (mode == PermutationMode::full ? "pixel permutation"
                                                                    : "row permutation");
        tasks.push_back(std::move(task));
    }
    return tasks;
}

// --- split tasks -------------------------------------------------------------------

std::vector<TaskSpec> make_split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                                       std::span<const std::pair<int, int>> class_pairs) {
    if (class_pairs.empty()) throw ConfigError("split tasks: no class pairs given");
    std::set<int> seen;
    for (const auto& [a, b] : class_pairs) {
        for (int c : {a, b}) {
            if (!seen.insert(c).second) {
                throw ConfigError("split tasks: class " + std::to_string(c) +
                                  " appears in more than one pair");
            }
        }
    }
    auto present = [](const LabeledDataset& ds, int c) {
        return std::find(ds.labels.begin(), ds.labels.end(), c) != ds.labels.end();
    };
    const int classes = std::max(train.num_classes, test.num_classes);

    std::vector<TaskSpec> tasks;
    for (std::size_t t = 0; t < class_pairs.size(); ++t) {
        const auto [a, b] = class_pairs[t];
        for (int c : {a, b}) {
            if (!present(train, c) || !present(test, c)) {
                throw ConfigError("split tasks: class " + std::to_string(c) +
                                  " missing from the base data");
            }
        }
        auto filter = [&](const LabeledDataset& ds) {
            std::vector<std::size_t> idx;
            for (std::size_t k = 0; k < ds.size(); ++k) {
                if (ds.labels[k] == a || ds.labels[k] == b) idx.push_back(k);
            }
            LabeledDataset out = ds.select(idx);
            for (int& y : out.labels) y = y == a ? 0 : 1;
            out.num_classes = 2;
            return out;
        };
        TaskSpec task;
        task.id = static_cast<int>(t);
        task.train = filter(train);
        task.test = filter(test);
        task.label_map.assign(static_cast<std::size_t>(classes), -1);
        task.label_map[static_cast<std::size_t>(a)] = 0;
        task.label_map[static_cast<std::size_t>(b)] = 1;
        task.description = "classes " + std::to_string(a) + "/" + std::to_string(b);
        tasks.push_back(std::move(task));
    }
    return tasks;
}

// --- synthetic ---------------------------------------------------------------------

std::vector<TaskSpec> synthetic_gaussian_tasks(int num_tasks, int n_per_class, int dim,
                                               std::uint64_t seed) {
    if (num_tasks < 1) throw ConfigError("synthetic tasks: need at least one task");
    if (n_per_class < 1) throw ConfigError("synthetic tasks: n_per_class must be >= 1");
    if (dim < 2) throw ConfigError("synthetic tasks: dim must be >= 2");

    std::vector<TaskSpec> tasks;
    for (int t = 0; t < num_tasks; ++t) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(t)));
        Vector centre(dim);
        Vector direction(dim);
        for (int d = 0; d < dim; ++d) centre[d] = rng.uniform(-2.0, 2.0);
        for (int d = 0; d < dim; ++d) direction[d] = rng.normal();
        direction.normalize();
        const Vector half = 0.5 * kSyntheticSeparation * direction;
        const Vector means[2] = {centre - half, centre + half};

        auto sample = [&]() {
            LabeledDataset ds;
            ds.images.resize(2 * n_per_class, dim);
            ds.num_classes = 2;
            // classes interleaved so any prefix stays close to balanced
            for (int k = 0; k < 2 * n_per_class; ++k) {
                const int label = k % 2;
                for (int d = 0; d < dim; ++d) ds.images(k, d) = means[label][d] + rng.normal();
                ds.labels.push_back(label);
            }
            return ds;
        };
        TaskSpec task;
        task.id = t;
        task.train = sample();
        task.test = sample();
        task.label_map = {0, 1};
        task.description = "gaussian blobs";
        tasks.push_back(std::move(task));
    }
    return tasks;
}

} // namespace ucl
