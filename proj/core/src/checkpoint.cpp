#include "ucl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ucl/errors.hpp"

namespace ucl {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

struct LayerShape {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
};

struct Manifest {
    std::string parameterization;
    HeadMode mode = HeadMode::single;
    std::vector<LayerShape> shared;
    std::vector<LayerShape> heads;
    std::vector<double> sigma_init;
    std::string blob = kBlobName;
    std::size_t blob_doubles = 0;
};

void append_double(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    out.append(bytes, 8);
}

double read_double(const std::string& blob, std::size_t index) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, blob.data() + index * 8, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    return std::bit_cast<double>(bits);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string render_manifest(const Manifest& m) {
    std::ostringstream os;
    os << "format = ucl-checkpoint\n";
    os << "version = " << kFormatVersion << "\n";
    os << "sigma_parameterization = " << m.parameterization << "\n";
    os << "head_mode = " << (m.mode == HeadMode::multi ? "multi" : "single") << "\n";
    os << "shared_layers = " << m.shared.size() << "\n";
    for (std::size_t k = 0; k < m.shared.size(); ++k) {
        os << "layer." << k << " = " << m.shared[k].rows << " " << m.shared[k].cols << "\n";
    }
    os << "heads = " << m.heads.size() << "\n";
    for (std::size_t k = 0; k < m.heads.size(); ++k) {
        os << "head." << k << " = " << m.heads[k].rows << " " << m.heads[k].cols << "\n";
    }
    os << "sigma_init =";
    for (double s : m.sigma_init) os << " " << format_double(s);
    os << "\n";
    os << "blob = " << m.blob << "\n";
    os << "blob_doubles = " << m.blob_doubles << "\n";
    return os.str();
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

LayerShape parse_shape(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    LayerShape shape;
    if (!(is >> shape.rows >> shape.cols) || shape.rows < 1 || shape.cols < 2) {
        throw FormatError("checkpoint manifest: bad shape for " + key + ": '" + value + "'");
    }
    return shape;
}

Manifest parse_manifest(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint manifest: bad line '" + line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("checkpoint manifest: missing key '" + key + "'");
        return it->second;
    };
    auto get_size = [&](const std::string& key) {
        try {
            return static_cast<std::size_t>(std::stoull(get(key)));
        } catch (const std::logic_error&) {
            throw FormatError("checkpoint manifest: bad integer for '" + key + "'");
        }
    };

    if (get("format") != "ucl-checkpoint") throw FormatError("checkpoint manifest: unknown format");
    if (get("version") != std::to_string(kFormatVersion)) {
        throw FormatError("checkpoint manifest: unsupported version " + get("version"));
    }
    Manifest m;
    m.parameterization = get("sigma_parameterization");
    if (m.parameterization != "softplus" && m.parameterization != "direct") {
        throw FormatError("checkpoint manifest: unknown sigma parameterization '" +
                          m.parameterization + "'");
    }
    const std::string& mode = get("head_mode");
    if (mode == "single") m.mode = HeadMode::single;
    else if (mode == "multi") m.mode = HeadMode::multi;
    else throw FormatError("checkpoint manifest: unknown head mode '" + mode + "'");

    const std::size_t n_shared = get_size("shared_layers");
    for (std::size_t k = 0; k < n_shared; ++k) {
        const std::string key = "layer." + std::to_string(k);
        m.shared.push_back(parse_shape(key, get(key)));
    }
    const std::size_t n_heads = get_size("heads");
    for (std::size_t k = 0; k < n_heads; ++k) {
        const std::string key = "head." + std::to_string(k);
        m.heads.push_back(parse_shape(key, get(key)));
    }
    std::istringstream sis(get("sigma_init"));
    double s = 0.0;
    while (sis >> s) m.sigma_init.push_back(s);
    m.blob = get("blob");
    m.blob_doubles = get_size("blob_doubles");
    return m;
}

struct RawLayer {
    Matrix mu;
    Vector node;
};

void write_parts(const fs::path& dir, Manifest manifest, const std::vector<RawLayer>& shared,
                 const std::vector<RawLayer>& heads) {
    std::string blob;
    std::size_t count = 0;
    auto emit = [&](const RawLayer& layer) {
        for (Eigen::Index i = 0; i < layer.mu.rows(); ++i) {
            for (Eigen::Index j = 0; j < layer.mu.cols(); ++j) append_double(blob, layer.mu(i, j));
        }
        for (Eigen::Index i = 0; i < layer.node.size(); ++i) append_double(blob, layer.node[i]);
        count += static_cast<std::size_t>(layer.mu.size() + layer.node.size());
    };
    for (const auto& l : shared) {
        manifest.shared.push_back({l.mu.rows(), l.mu.cols()});
        emit(l);
    }
    for (const auto& l : heads) {
        manifest.heads.push_back({l.mu.rows(), l.mu.cols()});
        emit(l);
    }
    manifest.blob_doubles = count;

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    atomic_write(dir / manifest.blob, blob);
    atomic_write(dir / kManifestName, render_manifest(manifest));
}

struct ReadParts {
    Manifest manifest;
    std::vector<RawLayer> shared;
    std::vector<RawLayer> heads;
};

ReadParts read_parts(const fs::path& dir) {
    ReadParts out;
    out.manifest = parse_manifest(read_file(dir / kManifestName));
    const std::string blob = read_file(dir / out.manifest.blob);
    if (blob.size() != out.manifest.blob_doubles * 8) {
        throw FormatError("checkpoint blob: expected " + std::to_string(out.manifest.blob_doubles * 8) +
                          " bytes, found " + std::to_string(blob.size()));
    }
    std::size_t cursor = 0;
    auto take = [&](const LayerShape& shape) {
        const auto needed = static_cast<std::size_t>(shape.rows * shape.cols + shape.rows);
        if (cursor + needed > out.manifest.blob_doubles) {
            throw FormatError("checkpoint blob: shorter than the declared layer shapes");
        }
        RawLayer layer{Matrix(shape.rows, shape.cols), Vector(shape.rows)};
        for (Eigen::Index i = 0; i < shape.rows; ++i) {
            for (Eigen::Index j = 0; j < shape.cols; ++j) layer.mu(i, j) = read_double(blob, cursor++);
        }
        for (Eigen::Index i = 0; i < shape.rows; ++i) layer.node[i] = read_double(blob, cursor++);
        return layer;
    };
    for (const auto& s : out.manifest.shared) out.shared.push_back(take(s));
    for (const auto& s : out.manifest.heads) out.heads.push_back(take(s));
    if (cursor != out.manifest.blob_doubles) {
        throw FormatError("checkpoint blob: longer than the declared layer shapes");
    }
    return out;
}

} // namespace

void atomic_write(const fs::path& path, const std::string& contents) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_checkpoint(const fs::path& dir, const Network& net) {
    Manifest m;
    m.parameterization = "softplus";
    m.mode = net.mode();
    m.sigma_init = net.sigma_init();
    std::vector<RawLayer> shared;
    std::vector<RawLayer> heads;
    for (const auto& l : net.shared()) shared.push_back({l.mu, l.rho});
    for (const auto& l : net.heads()) heads.push_back({l.mu, l.rho});
    write_parts(dir, std::move(m), shared, heads);
}

Network read_checkpoint(const fs::path& dir) {
    ReadParts parts = read_parts(dir);
    if (parts.manifest.parameterization != "softplus") {
        throw FormatError("checkpoint " + dir.string() + " stores a snapshot, not a network");
    }
    std::vector<GaussianNodeLayer> shared;
    std::vector<GaussianNodeLayer> heads;
    for (auto& l : parts.shared) shared.push_back({std::move(l.mu), std::move(l.node)});
    for (auto& l : parts.heads) heads.push_back({std::move(l.mu), std::move(l.node)});
    try {
        return Network(std::move(shared), std::move(heads), parts.manifest.mode,
                       parts.manifest.sigma_init);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("checkpoint: inconsistent layers: ") + e.what());
    }
}

void write_snapshot(const fs::path& dir, const TaskSnapshot& snapshot, HeadMode mode,
                    const std::vector<double>& sigma_init) {
    Manifest m;
    m.parameterization = "direct";
    m.mode = mode;
    m.sigma_init = sigma_init;
    std::vector<RawLayer> shared;
    std::vector<RawLayer> heads;
    for (const auto& p : snapshot.shared()) shared.push_back({p.mu, p.sigma});
    for (const auto& p : snapshot.heads()) heads.push_back({p.mu, p.sigma});
    write_parts(dir, std::move(m), shared, heads);
}

TaskSnapshot read_snapshot(const fs::path& dir) {
    ReadParts parts = read_parts(dir);
    if (parts.manifest.parameterization != "direct") {
        throw FormatError("checkpoint " + dir.string() + " stores a network, not a snapshot");
    }
    std::vector<GaussianParams> shared;
    std::vector<GaussianParams> heads;
    for (auto& l : parts.shared) shared.push_back({std::move(l.mu), std::move(l.node)});
    for (auto& l : parts.heads) heads.push_back({std::move(l.mu), std::move(l.node)});
    try {
        return TaskSnapshot(std::move(shared), std::move(heads));
    } catch (const DomainError& e) {
        throw FormatError(std::string("snapshot: ") + e.what());
    }
}

} // namespace ucl
