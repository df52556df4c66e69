#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "cact/errors.hpp"
#include "cact/nn.hpp"

namespace cact {

namespace detail {

inline void put_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ofstream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::uint64_t bits;
  if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>)
    bits = std::bit_cast<std::uint64_t>(value);
  else
    bits = static_cast<std::uint64_t>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  put_bytes(out, buf, sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in, const std::string& path) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw IoError("checkpoint truncated: " + path);
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (sizeof(T) == 8 && std::is_floating_point_v<T>)
    return std::bit_cast<T>(bits);
  else
    return static_cast<T>(bits);
}

}  // namespace detail

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout: "CACT" magic, u16 version, u64 entry count, then per entry a
// u32-length-prefixed UTF-8 name, u64 rank, rank u64 extents, and the raw
// values as little-endian f64. Round-trips bit-exactly.
inline void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  const auto entries = store.all();
  detail::put_bytes(out, "CACT", 4);
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, entries.size());
  for (const auto& [name, tensor] : entries) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    detail::put_bytes(out, name.data(), name.size());
    detail::put_le<std::uint64_t>(out, tensor.rank());
    for (std::size_t e : tensor.shape()) detail::put_le<std::uint64_t>(out, e);
    for (double v : tensor.values()) detail::put_le<double>(out, v);
  }
  out.flush();
  if (!out) throw IoError("checkpoint write failed: " + path);
}

// Loads into an already-constructed store: every file entry must exist with a
// matching shape, and every store entry must be present in the file.
inline void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "CACT", 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  const auto version = detail::get_le<std::uint16_t>(in, path);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const auto count = detail::get_le<std::uint64_t>(in, path);
  if (count != store.size())
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                  std::to_string(store.size()));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_le<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("checkpoint truncated: " + path);
    const auto rank = detail::get_le<std::uint64_t>(in, path);
    Shape shape(rank);
    for (auto& e : shape) e = detail::get_le<std::uint64_t>(in, path);
    if (!store.has(name)) throw IoError("checkpoint tensor not in model: " + name);
    Tensor t = store.find(name);
    if (t.shape() != shape)
      throw IoError("shape mismatch for " + name + ": checkpoint " + shape_str(shape) +
                    " vs model " + shape_str(t.shape()));
    for (double& v : t.data()) v = detail::get_le<double>(in, path);
  }
}

}  // namespace cact
