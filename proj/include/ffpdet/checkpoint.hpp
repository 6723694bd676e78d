#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ffpdet/nn.hpp"

namespace ffpdet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format stores raw little-endian values");

/// Weight file layout (binary):
///   "FFPDET1\n"
///   "precision f32\n"            (or f64)
///   "config <byte count>\n"      followed by that many bytes, then "\n"
///   "params <entry count>\n"
///   one "<name> <rank> <d0> <d1> ...\n" line per entry (manifest order)
///   "data\n"
///   raw little-endian values, entry by entry in manifest order
struct CheckpointInfo {
  std::string precision;  // "f32" | "f64"
  std::string config_text;
  std::vector<std::pair<std::string, Shape>> manifest;
  std::streamoff data_offset = 0;
};

namespace detail {

inline std::string read_line(std::istream& is, const std::string& where) {
  std::string line;
  require<DataError>(static_cast<bool>(std::getline(is, line)),
                     "checkpoint truncated in " + where);
  return line;
}

}  // namespace detail

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require<IoError>(is.is_open(), "cannot open checkpoint " + path.string());
  CheckpointInfo info;
  require<DataError>(detail::read_line(is, "magic") == "FFPDET1",
                     "not a model checkpoint (bad magic): " + path.string());
  std::string line = detail::read_line(is, "precision");
  require<DataError>(line.rfind("precision ", 0) == 0,
                     "checkpoint missing precision tag");
  info.precision = line.substr(10);
  require<DataError>(info.precision == "f32" || info.precision == "f64",
                     "unknown checkpoint precision: " + info.precision);
  line = detail::read_line(is, "config header");
  require<DataError>(line.rfind("config ", 0) == 0,
                     "checkpoint missing config block");
  const long long clen = std::stoll(line.substr(7));
  info.config_text.resize(static_cast<size_t>(clen));
  is.read(info.config_text.data(), clen);
  require<DataError>(is.good() && is.get() == '\n',
                     "checkpoint config block truncated");
  line = detail::read_line(is, "manifest header");
  require<DataError>(line.rfind("params ", 0) == 0,
                     "checkpoint missing manifest");
  const long long count = std::stoll(line.substr(7));
  for (long long i = 0; i < count; ++i) {
    std::istringstream ls(detail::read_line(is, "manifest"));
    std::string name;
    int64_t rank = 0;
    ls >> name >> rank;
    Shape shape(static_cast<size_t>(rank));
    for (auto& d : shape) ls >> d;
    require<DataError>(!ls.fail(), "malformed manifest line in " +
                                       path.string());
    info.manifest.emplace_back(std::move(name), std::move(shape));
  }
  require<DataError>(detail::read_line(is, "data header") == "data",
                     "checkpoint missing data section");
  info.data_offset = is.tellg();
  return info;
}

template <typename T>
void save_checkpoint(const ParamStore<T>& ps, const std::string& config_text,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require<IoError>(os.is_open(), "cannot write checkpoint " + path.string());
  os << "FFPDET1\n";
  os << "precision " << (sizeof(T) == 4 ? "f32" : "f64") << "\n";
  os << "config " << config_text.size() << "\n" << config_text << "\n";
  os << "params " << ps.entries().size() << "\n";
  for (const auto& e : ps.entries()) {
    os << e.name << " " << e.tensor.shape().size();
    for (int64_t d : e.tensor.shape()) os << " " << d;
    os << "\n";
  }
  os << "data\n";
  for (const auto& e : ps.entries())
    os.write(reinterpret_cast<const char*>(e.tensor.ptr()),
             e.tensor.numel() * static_cast<int64_t>(sizeof(T)));
  require<IoError>(os.good(), "short write on checkpoint " + path.string());
}

/// Loads values into an existing store. The stored manifest must match the
/// store exactly (same names, same order, same shapes); any difference is
/// reported. Stored values convert to T if the widths differ.
template <typename T>
CheckpointInfo load_checkpoint(ParamStore<T>& ps,
                               const std::filesystem::path& path) {
  CheckpointInfo info = read_checkpoint_info(path);
  std::string diff;
  const auto& entries = ps.entries();
  const size_t n = std::max(entries.size(), info.manifest.size());
  for (size_t i = 0; i < n; ++i) {
    if (i >= entries.size()) {
      diff += "\n  extra in file: " + info.manifest[i].first;
      continue;
    }
    if (i >= info.manifest.size()) {
      diff += "\n  missing from file: " + entries[i].name;
      continue;
    }
    if (entries[i].name != info.manifest[i].first)
      diff += "\n  name mismatch: model has " + entries[i].name +
              ", file has " + info.manifest[i].first;
    else if (entries[i].tensor.shape() != info.manifest[i].second)
      diff += "\n  shape mismatch for " + entries[i].name + ": model " +
              shape_str(entries[i].tensor.shape()) + ", file " +
              shape_str(info.manifest[i].second);
  }
  require<DataError>(diff.empty(),
                     "checkpoint does not match model configuration:" + diff);

  std::ifstream is(path, std::ios::binary);
  require<IoError>(is.is_open(), "cannot open checkpoint " + path.string());
  is.seekg(info.data_offset);
  const bool stored64 = info.precision == "f64";
  for (auto& e : ps.entries()) {
    const int64_t count = e.tensor.numel();
    if ((stored64 && sizeof(T) == 8) || (!stored64 && sizeof(T) == 4)) {
      is.read(reinterpret_cast<char*>(e.tensor.ptr()),
              count * static_cast<int64_t>(sizeof(T)));
    } else if (stored64) {
      std::vector<double> tmp(static_cast<size_t>(count));
      is.read(reinterpret_cast<char*>(tmp.data()), count * 8);
      for (int64_t i = 0; i < count; ++i)
        e.tensor.data()[i] = static_cast<T>(tmp[i]);
    } else {
      std::vector<float> tmp(static_cast<size_t>(count));
      is.read(reinterpret_cast<char*>(tmp.data()), count * 4);
      for (int64_t i = 0; i < count; ++i)
        e.tensor.data()[i] = static_cast<T>(tmp[i]);
    }
    require<DataError>(is.good(),
                       "checkpoint data truncated at " + e.name);
  }
  return info;
}

}  // namespace ffpdet
