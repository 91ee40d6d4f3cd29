#pragma once

// SQT1 tensor container and named-tensor checkpoints.
//
// One SQT1 record: the 4 bytes "SQT1", u32 rank, rank x u32 extents, then the
// values as float32, everything little-endian and row-major.
//
// A checkpoint is a directory holding `manifest.tsv` (name, extents, file per
// line, in insertion order) and one SQT1 file per tensor.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rcn/errors.hpp"
#include "rcn/tensor.hpp"

namespace rcn {

inline constexpr std::array<char, 4> kSqtMagic{'S', 'Q', 'T', '1'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("SQT1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename T>
void write_sqt(std::ostream& os, const Tensor<T>& t) {
  os.write(kSqtMagic.data(), 4);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
  for (T v : t.data()) {
    const float f = static_cast<float>(v);
    detail::put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw DataError("SQT1: write failed");
}

template <typename T = float>
Tensor<T> read_sqt(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kSqtMagic) throw DataError("SQT1: bad magic");
  const std::uint32_t rank = detail::get_u32(is);
  if (rank > 16) throw DataError("SQT1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = detail::get_u32(is);
  const std::size_t n = shape_size(shape);
  std::vector<T> data(n);
  for (auto& v : data) v = static_cast<T>(std::bit_cast<float>(detail::get_u32(is)));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_sqt(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_sqt(os, t);
}

template <typename T = float>
Tensor<T> load_sqt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return read_sqt<T>(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

inline std::string extents_str(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s.empty() ? "scalar" : s;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const NamedTensors<T>& tensors) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.tsv", std::ios::binary);
  if (!manifest) throw DataError("cannot write manifest in " + dir.string());
  manifest << "name\textents\tfile\n";
  for (const auto& [name, tensor] : tensors) {
    const std::string file = name + ".sqt";
    save_sqt(dir / file, tensor);
    manifest << name << '\t' << extents_str(tensor.shape()) << '\t' << file << '\n';
  }
}

template <typename T = float>
NamedTensors<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw DataError("no manifest.tsv in " + dir.string());
  NamedTensors<T> out;
  std::string line;
  std::getline(manifest, line);  // header
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string name, extents, file;
    if (!std::getline(fields, name, '\t') || !std::getline(fields, extents, '\t') ||
        !std::getline(fields, file, '\t')) {
      throw DataError("malformed manifest line: " + line);
    }
    Tensor<T> t = load_sqt<T>(dir / file);
    if (extents_str(t.shape()) != extents) {
      throw DataError("manifest lists " + name + " as " + extents + " but file holds " +
                      extents_str(t.shape()));
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace rcn
