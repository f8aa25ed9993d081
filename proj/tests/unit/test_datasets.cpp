#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <numeric>
#include <set>
#include <vector>

#include "temp_dir.hpp"
#include "ucl/checkpoint.hpp"
#include "ucl/datasets.hpp"
#include "ucl/errors.hpp"

using namespace ucl;
namespace fs = std::filesystem;

namespace {

const fs::path kIdx = fs::path(UCL_FIXTURE_DIR) / "idx";

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
    const std::string s = read_file(p);
    return {s.begin(), s.end()};
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

// Small image dataset with distinct pixel values per example.
LabeledDataset tiny_images(int n, int rows, int cols, int classes) {
    LabeledDataset ds;
    ds.rows = rows;
    ds.cols = cols;
    ds.num_classes = classes;
    ds.images.resize(n, rows * cols);
    for (int k = 0; k < n; ++k) {
        for (int p = 0; p < rows * cols; ++p) ds.images(k, p) = ((k * 31 + p * 7) % 256) / 255.0;
        ds.labels.push_back(k % classes);
    }
    return ds;
}

template <class F>
IdxError::Reason reason_of(F&& f) {
    try {
        f();
    } catch (const IdxError& e) {
        return e.reason();
    }
    FAIL("expected IdxError");
    return IdxError::Reason::wrong_magic;
}

} // namespace

TEST_SUITE("datasets") {

TEST_CASE("hand-built 2-image 3x3 IDX fixture parses to the expected matrix") {
    std::vector<std::uint8_t> img;
    put_u32(img, 0x803);
    put_u32(img, 2);
    put_u32(img, 3);
    put_u32(img, 3);
    const std::uint8_t pixels[18] = {0, 255, 51, 102, 153, 204, 1, 2, 3, 10, 20, 30, 40, 50, 60, 70, 80, 90};
    img.insert(img.end(), pixels, pixels + 18);
    const IdxImages parsed = parse_idx_images(img);
    CHECK(parsed.rows == 3);
    CHECK(parsed.cols == 3);
    REQUIRE(parsed.pixels.rows() == 2);
    REQUIRE(parsed.pixels.cols() == 9);
    CHECK(parsed.pixels(0, 0) == 0.0);
    CHECK(parsed.pixels(0, 1) == 1.0);
    CHECK(parsed.pixels(0, 2) == 0.2);
    for (int k = 0; k < 18; ++k) CHECK(parsed.pixels.data()[k] == pixels[k] / 255.0);
    CHECK(serialize_idx_images(parsed.pixels, 3, 3) == img);

    std::vector<std::uint8_t> lab;
    put_u32(lab, 0x801);
    put_u32(lab, 2);
    lab.push_back(4);
    lab.push_back(9);
    CHECK(parse_idx_labels(lab) == std::vector<int>{4, 9});
    const std::vector<int> labels = {4, 9};
    CHECK(serialize_idx_labels(labels) == lab);
}

TEST_CASE("golden fixture files round-trip bitwise") {
    const auto img = bytes_of(kIdx / "golden-images-idx3-ubyte");
    const auto lab = bytes_of(kIdx / "golden-labels-idx1-ubyte");
    const IdxImages parsed = parse_idx_images(img);
    CHECK(parsed.pixels.rows() == 3);
    CHECK(parsed.rows == 4);
    CHECK(parsed.cols == 5);
    CHECK(serialize_idx_images(parsed.pixels, parsed.rows, parsed.cols) == img);
    const auto labels = parse_idx_labels(lab);
    CHECK(labels == std::vector<int>{7, 0, 9});
    CHECK(serialize_idx_labels(labels) == lab);

    const LabeledDataset ds = load_idx(kIdx / "golden-images-idx3-ubyte", kIdx / "golden-labels-idx1-ubyte");
    CHECK(ds.size() == 3);
    CHECK(ds.num_classes == 10);
    CHECK(ds.dim() == 20);
    CHECK(ds.images(1, 0) == ((20 * 37 + 11) % 256) / 255.0);
}

TEST_CASE("malformed IDX input gives distinct errors naming the field") {
    const auto bad_magic = bytes_of(kIdx / "bad-magic-images-idx3-ubyte");
    const auto truncated = bytes_of(kIdx / "truncated-images-idx3-ubyte");
    CHECK(reason_of([&] { parse_idx_images(bad_magic); }) == IdxError::Reason::wrong_magic);
    CHECK(reason_of([&] { parse_idx_images(truncated); }) == IdxError::Reason::truncated);
    try {
        parse_idx_images(bad_magic);
    } catch (const IdxError& e) {
        CHECK(e.field() == "images.magic");
        CHECK(e.kind() == "idx-wrong-magic");
    }
    try {
        parse_idx_images(truncated);
    } catch (const IdxError& e) {
        CHECK(e.field() == "images.data");
        CHECK(e.kind() == "idx-truncated");
    }

    std::vector<std::uint8_t> m802;
    put_u32(m802, 0x802);
    put_u32(m802, 0);
    CHECK(reason_of([&] { parse_idx_labels(m802); }) == IdxError::Reason::wrong_magic);
    const std::vector<std::uint8_t> header_only = {0, 0, 8};
    CHECK(reason_of([&] { parse_idx_images(header_only); }) == IdxError::Reason::truncated);

    CHECK(reason_of([&] {
              load_idx(kIdx / "golden-images-idx3-ubyte", kIdx / "short-labels-idx1-ubyte");
          }) == IdxError::Reason::count_mismatch);
    CHECK_THROWS_AS(load_idx(kIdx / "absent", kIdx / "golden-labels-idx1-ubyte"), IoError);
}

TEST_CASE("permuted tasks") {
    const LabeledDataset train = tiny_images(12, 4, 5, 3);
    const LabeledDataset test = tiny_images(6, 4, 5, 3);

    SUBCASE("a single task is the original data") {
        const auto tasks = make_permuted_tasks(train, test, 1, 0, PermutationMode::full);
        REQUIRE(tasks.size() == 1);
        CHECK(tasks[0].train.images == train.images);
        CHECK(tasks[0].test.images == test.images);
        CHECK(tasks[0].train.labels == train.labels);
    }
    SUBCASE("every task permutation is a bijection, applied identically to train and test") {
        for (auto mode : {PermutationMode::full, PermutationMode::row}) {
            const auto tasks = make_permuted_tasks(train, test, 4, 9, mode);
            for (const auto& t : tasks) {
                std::vector<int> sorted = t.permutation;
                std::sort(sorted.begin(), sorted.end());
                for (int k = 0; k < 20; ++k) CHECK(sorted[k] == k);
                for (int p = 0; p < 20; ++p) {
                    CHECK(t.train.images(3, p) == train.images(3, t.permutation[p]));
                    CHECK(t.test.images(2, p) == test.images(2, t.permutation[p]));
                }
                CHECK(t.train.labels == train.labels);
                CHECK(t.train.num_classes == 3);
            }
        }
    }
    SUBCASE("row mode moves whole rows") {
        const auto perm = task_permutation(28, 28, 3, 5, PermutationMode::row);
        std::set<int> rows;
        for (int r = 0; r < 28; ++r) {
            const int src = perm[r * 28];
            CHECK(src % 28 == 0);
            for (int c = 0; c < 28; ++c) CHECK(perm[r * 28 + c] == src + c);
            rows.insert(src / 28);
        }
        CHECK(rows.size() == 28);
    }
    SUBCASE("seeded: same seed reproduces, different seeds or tasks differ") {
        const auto a = task_permutation(28, 28, 1, 0, PermutationMode::full);
        CHECK(a == task_permutation(28, 28, 1, 0, PermutationMode::full));
        CHECK(a != task_permutation(28, 28, 1, 1, PermutationMode::full));
        CHECK(a != task_permutation(28, 28, 2, 0, PermutationMode::full));
        std::vector<int> identity(784);
        std::iota(identity.begin(), identity.end(), 0);
        CHECK(task_permutation(28, 28, 0, 123, PermutationMode::full) == identity);
    }
    SUBCASE("sentinel image") {
        LabeledDataset sentinel = tiny_images(1, 4, 5, 3);
        sentinel.images.setZero();
        sentinel.images(0, 7) = 1.0;
        const auto tasks = make_permuted_tasks(sentinel, sentinel, 3, 4, PermutationMode::full);
        for (const auto& t : tasks) {
            const auto where = std::find(t.permutation.begin(), t.permutation.end(), 7) - t.permutation.begin();
            CHECK(t.train.images(0, where) == 1.0);
            CHECK(t.test.images(0, where) == 1.0);
            CHECK(t.train.images.sum() == 1.0);
        }
    }
}

TEST_CASE("split tasks") {
    const LabeledDataset train = tiny_images(40, 2, 2, 10);
    const LabeledDataset test = tiny_images(20, 2, 2, 10);
    const std::vector<std::pair<int, int>> pairs = {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    const auto tasks = make_split_tasks(train, test, pairs);
    REQUIRE(tasks.size() == 5);
    std::size_t total = 0;
    std::set<std::vector<double>> seen;
    for (const auto& t : tasks) {
        total += t.train.size();
        CHECK(t.train.num_classes == 2);
        for (int y : t.train.labels) CHECK((y == 0 || y == 1));
        for (Eigen::Index k = 0; k < t.train.images.rows(); ++k) {
            seen.insert(std::vector<double>(t.train.images.row(k).begin(), t.train.images.row(k).end()));
        }
    }
    CHECK(total == train.size());
    CHECK(seen.size() == train.size());

    const std::vector<std::pair<int, int>> three_four = {{3, 4}};
    const auto t34 = make_split_tasks(train, test, three_four).front();
    CHECK(t34.label_map[3] == 0);
    CHECK(t34.label_map[4] == 1);
    CHECK(t34.label_map[5] == -1);
    // every remapped-0 example had source label 3: match rows back to the source
    for (std::size_t k = 0; k < t34.train.size(); ++k) {
        bool found = false;
        for (std::size_t s = 0; s < train.size(); ++s) {
            if (train.images.row(s) == t34.train.images.row(k)) {
                CHECK(train.labels[s] == (t34.train.labels[k] == 0 ? 3 : 4));
                found = true;
            }
        }
        CHECK(found);
    }

    const std::vector<std::pair<int, int>> overlap = {{0, 1}, {1, 2}};
    CHECK_THROWS_AS(make_split_tasks(train, test, overlap), ConfigError);
    const std::vector<std::pair<int, int>> missing = {{0, 11}};
    CHECK_THROWS_AS(make_split_tasks(train, test, missing), ConfigError);
}

TEST_CASE("synthetic tasks") {
    const auto a = synthetic_gaussian_tasks(3, 50, 4, 17);
    const auto b = synthetic_gaussian_tasks(3, 50, 4, 17);
    REQUIRE(a.size() == 3);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(a[t].train.images == b[t].train.images);
        CHECK(a[t].test.images == b[t].test.images);
        CHECK(a[t].train.labels == b[t].train.labels);
        CHECK(std::count(a[t].train.labels.begin(), a[t].train.labels.end(), 0) == 50);
        CHECK(std::count(a[t].train.labels.begin(), a[t].train.labels.end(), 1) == 50);
        CHECK(a[t].train.dim() == 4);
    }
    CHECK(a[0].train.images != a[1].train.images);
    CHECK(synthetic_gaussian_tasks(1, 50, 4, 18)[0].train.images != a[0].train.images);

    // class means sit 6 apart (sample-mean distance within sampling noise)
    const auto big = synthetic_gaussian_tasks(1, 4000, 3, 5)[0].train;
    Eigen::RowVectorXd m0 = Eigen::RowVectorXd::Zero(3), m1 = Eigen::RowVectorXd::Zero(3);
    for (std::size_t k = 0; k < big.size(); ++k) (big.labels[k] == 0 ? m0 : m1) += big.images.row(k);
    CHECK((m0 - m1).norm() / 4000.0 == doctest::Approx(6.0).epsilon(0.02));

    CHECK_THROWS_AS(synthetic_gaussian_tasks(0, 5, 2, 0), ConfigError);
    CHECK_THROWS_AS(synthetic_gaussian_tasks(1, 5, 1, 0), ConfigError);
}

TEST_CASE("head and select") {
    const LabeledDataset ds = tiny_images(10, 2, 3, 4);
    CHECK(ds.head(3).size() == 3);
    CHECK(ds.head(0).size() == 10);
    CHECK(ds.head(50).size() == 10);
    const std::vector<std::size_t> idx = {7, 2};
    const LabeledDataset s = ds.select(idx);
    CHECK(s.images.row(0) == ds.images.row(7));
    CHECK(s.labels[1] == ds.labels[2]);
    CHECK(s.rows == 2);
}

TEST_CASE("real MNIST files, when available") {
    const char* root = std::getenv("UCL_DATA_ROOT");
    if (root == nullptr || *root == '\0') return;
    const auto files = MnistFiles::in(fs::path(root) / "mnist");
    if (!files.exist()) return;
    const LabeledDataset test = load_idx(files.test_images, files.test_labels);
    CHECK(test.size() == 10000);
    CHECK(test.dim() == 784);
    CHECK(test.num_classes == 10);
    CHECK(test.images.minCoeff() >= 0.0);
    CHECK(test.images.maxCoeff() <= 1.0);
    const auto raw = bytes_of(files.test_labels);
    CHECK(serialize_idx_labels(test.labels) == raw);
}

}
