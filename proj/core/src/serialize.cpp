#include "fosnet/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>

#include "fosnet/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor file io assumes a little-endian host");

namespace fosnet {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'F', 'O', 'S', 'T'};

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n, const fs::path& path,
                const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw IoError("truncated tensor file " + path.string() + " while reading " + what);
}

std::string sanitize_name(const std::string& name) {
    std::string s = name;
    std::replace(s.begin(), s.end(), '/', '.');
    return s;
}

}  // namespace

template <typename T>
void write_fost(const fs::path& path, const TensorT<T>& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_bytes(out, kMagic, 4);
    const std::uint32_t version = kFostVersion;
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    write_bytes(out, &version, 4);
    write_bytes(out, &rank, 4);
    for (std::size_t i = 0; i < t.rank(); ++i) {
        const std::uint64_t e = t.extent(i);
        write_bytes(out, &e, 8);
    }
    const std::uint8_t dt = static_cast<std::uint8_t>(dtype_of<T>());
    write_bytes(out, &dt, 1);
    write_bytes(out, t.data(), t.numel() * sizeof(T));
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
TensorT<T> read_fost(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file " + path.string());
    char magic[4];
    read_bytes(in, magic, 4, path, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("bad magic bytes in tensor file " + path.string());
    std::uint32_t version = 0, rank = 0;
    read_bytes(in, &version, 4, path, "version");
    if (version != kFostVersion)
        throw IoError("unsupported tensor file version " + std::to_string(version) + " in " +
                      path.string());
    read_bytes(in, &rank, 4, path, "rank");
    if (rank > 8) throw IoError("implausible rank " + std::to_string(rank) + " in " +
                                path.string());
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t e = 0;
        read_bytes(in, &e, 8, path, "extents");
        shape[i] = static_cast<std::size_t>(e);
    }
    std::uint8_t dt = 0;
    read_bytes(in, &dt, 1, path, "dtype");
    const std::size_t n = shape_numel(shape);

    auto read_payload = [&](auto* tag) {
        using U = std::remove_pointer_t<decltype(tag)>;
        TensorT<U> raw(shape);
        read_bytes(in, raw.data(), n * sizeof(U), path, "data");
        char extra;
        if (in.read(&extra, 1))
            throw IoError("trailing bytes after tensor data in " + path.string());
        return raw;
    };

    if (dt == static_cast<std::uint8_t>(Dtype::f64)) {
        TensorT<double> raw = read_payload(static_cast<double*>(nullptr));
        if constexpr (std::is_same_v<T, double>) return raw;
        else return raw.template cast<T>();
    }
    if (dt == static_cast<std::uint8_t>(Dtype::f32)) {
        TensorT<float> raw = read_payload(static_cast<float*>(nullptr));
        if constexpr (std::is_same_v<T, float>) return raw;
        else return raw.template cast<T>();
    }
    throw IoError("unknown dtype tag " + std::to_string(dt) + " in " + path.string());
}

template <typename T>
void save_tensors(const fs::path& dir,
                  const std::vector<std::pair<std::string, const TensorT<T>*>>& named,
                  const nlohmann::json& meta) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["version"] = kFostVersion;
    manifest["meta"] = meta;
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& [name, tensor] : named) {
        const std::string file = sanitize_name(name) + ".fost";
        write_fost(dir / file, *tensor);
        nlohmann::json entry;
        entry["name"] = name;
        entry["file"] = file;
        entry["shape"] = tensor->shape();
        entry["dtype"] = dtype_of<T>() == Dtype::f64 ? "f64" : "f32";
        manifest["tensors"].push_back(std::move(entry));
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot open " + (dir / "manifest.json").string() + " for writing");
    out << manifest.dump(2) << "\n";
}

template <typename T>
LoadedTensors<T> load_tensors(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    std::ifstream in(mpath);
    if (!in) throw IoError("cannot open manifest " + mpath.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
    }
    if (manifest.value("version", 0u) != kFostVersion)
        throw IoError("unsupported manifest version in " + mpath.string());
    LoadedTensors<T> out;
    out.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::string file = entry.at("file").get<std::string>();
        TensorT<T> t = read_fost<T>(dir / file);
        const Shape expect = entry.at("shape").get<Shape>();
        if (t.shape() != expect)
            throw IoError("tensor " + name + " in " + dir.string() + " has shape " +
                          shape_str(t.shape()) + ", manifest says " + shape_str(expect));
        out.tensors.emplace(name, std::move(t));
    }
    return out;
}

template <typename T>
void write_pgm(const fs::path& path, const TensorT<T>& plane) {
    if (plane.rank() != 2)
        throw ShapeError("write_pgm: expected a rank-2 plane, got " + shape_str(plane.shape()));
    const std::size_t h = plane.extent(0), w = plane.extent(1);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(w);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const double v = std::clamp(static_cast<double>(plane(i, j)), 0.0, 1.0);
            row[j] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
        write_bytes(out, row.data(), w);
    }
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
TensorT<T> parse_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    if (magic != "P5" || maxval != 255)
        throw IoError(path.string() + " is not an 8-bit binary PGM");
    in.get();
    TensorT<T> plane({h, w});
    std::vector<unsigned char> row(w);
    for (std::size_t i = 0; i < h; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w));
        if (static_cast<std::size_t>(in.gcount()) != w)
            throw IoError("truncated image " + path.string());
        for (std::size_t j = 0; j < w; ++j)
            plane(i, j) = static_cast<T>(row[j]) / T(255);
    }
    return plane;
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc), name_(path.string()), columns_(header.size()) {
    if (!out_) throw IoError("cannot open " + name_ + " for writing");
    row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
        throw IoError("csv row with " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(columns_) + " in " + name_);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out_ << ',';
        out_ << cells[i];
    }
    out_ << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + name_);
}

#define FOSNET_INSTANTIATE_SERIALIZE(T)                                                     \
    template void write_fost<T>(const fs::path&, const TensorT<T>&);                        \
    template TensorT<T> read_fost<T>(const fs::path&);                                      \
    template void save_tensors<T>(const fs::path&,                                          \
                                  const std::vector<std::pair<std::string,                  \
                                                              const TensorT<T>*>>&,        \
                                  const nlohmann::json&);                                   \
    template LoadedTensors<T> load_tensors<T>(const fs::path&);                             \
    template void write_pgm<T>(const fs::path&, const TensorT<T>&);                         \
    template TensorT<T> parse_pgm<T>(const fs::path&);

FOSNET_INSTANTIATE_SERIALIZE(float)
FOSNET_INSTANTIATE_SERIALIZE(double)

#undef FOSNET_INSTANTIATE_SERIALIZE

}  // namespace fosnet
