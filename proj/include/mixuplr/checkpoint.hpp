#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "mixuplr/error.hpp"
#include "mixuplr/mlp.hpp"

namespace mixuplr {

// Checkpoint layout (all integers and floats little-endian):
//   "MLRLAB1"                 7-byte magic, the trailing digit is the version
//   u32 width_count, u32 widths[width_count]
//   u32 activation            0 = relu, 1 = tanh
//   u64 param_count
//   f64 params[param_count]

inline constexpr char kCheckpointMagic[] = "MLRLAB1";

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ConfigError("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Mlp& model) {
  os.write(kCheckpointMagic, 7);
  const auto& spec = model.spec();
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.widths.size()));
  for (std::size_t w : spec.widths) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(w));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.activation));
  detail::write_le<std::uint64_t>(os, model.params().size());
  for (double p : model.params()) detail::write_le<double>(os, p);
}

inline Mlp read_checkpoint(std::istream& is) {
  char magic[7];
  if (!is.read(magic, 7) || std::memcmp(magic, kCheckpointMagic, 7) != 0) {
    throw ConfigError("checkpoint: bad magic (expected MLRLAB1)");
  }
  MlpSpec spec;
  const auto n_widths = detail::read_le<std::uint32_t>(is);
  if (n_widths < 2 || n_widths > 64) throw ConfigError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < n_widths; ++i) spec.widths.push_back(detail::read_le<std::uint32_t>(is));
  const auto act = detail::read_le<std::uint32_t>(is);
  if (act > 1) throw ConfigError("checkpoint: unknown activation id " + std::to_string(act));
  spec.activation = static_cast<Activation>(act);
  try {
    spec.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
  const auto n_params = detail::read_le<std::uint64_t>(is);
  if (n_params != spec.param_count()) throw ConfigError("checkpoint: parameter count does not match widths");
  ParamVector params(n_params);
  for (auto& p : params) p = detail::read_le<double>(is);
  return Mlp(std::move(spec), std::move(params));
}

inline void save_checkpoint(const std::filesystem::path& path, const Mlp& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  write_checkpoint(os, model);
}

inline Mlp load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("missing checkpoint " + path.string());
  return read_checkpoint(is);
}

/// Loads and rejects a checkpoint whose architecture differs from `expected`.
inline Mlp load_checkpoint(const std::filesystem::path& path, const MlpSpec& expected) {
  auto model = load_checkpoint(path);
  if (!(model.spec() == expected)) throw ConfigError("checkpoint " + path.string() + ": architecture mismatch");
  return model;
}

}  // namespace mixuplr
