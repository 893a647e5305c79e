#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fosnet/tensor.hpp"

namespace fosnet {

// Binary tensor file: magic "FOST", u32 version=1, u32 rank, rank u64
// extents, u8 dtype (0 = f64, 1 = f32), then raw row-major data.  All
// integers and data little-endian.
inline constexpr std::uint32_t kFostVersion = 1;

template <typename T>
void write_fost(const std::filesystem::path& path, const TensorT<T>& t);

// Loads a tensor, converting between precisions when the stored dtype
// differs from T.  Same-precision round trips are bit-exact.
template <typename T>
TensorT<T> read_fost(const std::filesystem::path& path);

// Writes one .fost file per named tensor plus a manifest.json listing
// name -> file -> shape -> dtype, with `meta` stored under "meta".
template <typename T>
void save_tensors(const std::filesystem::path& dir,
                  const std::vector<std::pair<std::string, const TensorT<T>*>>& named,
                  const nlohmann::json& meta);

template <typename T>
struct LoadedTensors {
    std::map<std::string, TensorT<T>> tensors;
    nlohmann::json meta;
};

template <typename T>
LoadedTensors<T> load_tensors(const std::filesystem::path& dir);

// 8-bit binary PGM (P5).  Values are clamped to [0,1] and quantized to 255
// levels.  parse_pgm returns levels mapped back into [0,1].
template <typename T>
void write_pgm(const std::filesystem::path& path, const TensorT<T>& plane);

template <typename T>
TensorT<T> parse_pgm(const std::filesystem::path& path);

// Formats a double with enough digits ("%.17g") to reparse bit-exactly.
std::string format_g17(double v);

// CSV writer with a fixed column count and deterministic float formatting.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& cells);

private:
    std::ofstream out_;
    std::string name_;
    std::size_t columns_;
};

}  // namespace fosnet
