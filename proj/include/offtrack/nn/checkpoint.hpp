#pragma once

// Checkpoint layout (all integers little-endian):
//   "OFTK1"                      5 bytes
//   u32 arch id length, arch id  (e.g. "grm/vehicle")
//   u32 tensor count
//   per tensor: u32 name length, name, u64 rows, u64 cols
//   u32 extra length, extra      (free-form text, e.g. anchors)
//   float64 blob                 every tensor's values, row-major, in order

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "offtrack/nn/tensor.hpp"

namespace offtrack::nn {

inline constexpr char kCheckpointMagic[] = "OFTK1";

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw Error("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get_le<std::uint32_t>(is);
  std::string s(n, '\0');
  if (n > 0 && !is.read(s.data(), n)) throw Error("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::string& arch, const TensorRefs& tensors,
                             const std::string& extra = "") {
  os.write(kCheckpointMagic, 5);
  detail::put_string(os, arch);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    detail::put_string(os, t->name);
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t->rows()));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t->cols()));
  }
  detail::put_string(os, extra);
  for (const Tensor* t : tensors)
    for (Eigen::Index i = 0; i < t->value.size(); ++i) detail::put_le<double>(os, t->value.data()[i]);
}

/// Reads into tensors that already have the expected names and shapes;
/// returns the extra text.
inline std::string read_checkpoint(std::istream& is, const std::string& arch,
                                   const TensorRefs& tensors) {
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw Error("not a checkpoint (bad magic)");
  const std::string got_arch = detail::get_string(is);
  if (got_arch != arch) throw ShapeError("checkpoint arch '" + got_arch + "', expected '" + arch + "'");
  const auto count = detail::get_le<std::uint32_t>(is);
  if (count != tensors.size())
    throw ShapeError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                     std::to_string(tensors.size()));
  for (const Tensor* t : tensors) {
    const std::string name = detail::get_string(is);
    const auto rows = detail::get_le<std::uint64_t>(is);
    const auto cols = detail::get_le<std::uint64_t>(is);
    if (name != t->name || rows != static_cast<std::uint64_t>(t->rows()) ||
        cols != static_cast<std::uint64_t>(t->cols()))
      throw ShapeError("checkpoint tensor '" + name + "' does not match '" + t->name + "'");
  }
  std::string extra = detail::get_string(is);
  for (Tensor* t : tensors)
    for (Eigen::Index i = 0; i < t->value.size(); ++i) t->value.data()[i] = detail::get_le<double>(is);
  return extra;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::string& arch,
                            const TensorRefs& tensors, const std::string& extra = "") {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  write_checkpoint(os, arch, tensors, extra);
}

inline std::string load_checkpoint(const std::filesystem::path& path, const std::string& arch,
                                   const TensorRefs& tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  return read_checkpoint(is, arch, tensors);
}

}  // namespace offtrack::nn
