#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "params.hpp"
#include "tensor.hpp"

namespace ldsep {

// Checkpoint container shared by codec and generator models:
//   magic "LDSP" | u32 version | u32 kind | u32 n_cfg | i64 cfg[n_cfg]
//   | u64 n_params | per param: u16 name_len, name, u32 rank, u32 dims[],
//   f32 data[] (little-endian throughout).
// Training-state checkpoints (kind 3) use the same layout with f64 payloads
// so interrupted runs resume bit-exactly.

enum class CheckpointKind : std::uint32_t { Codec = 1, Generator = 2, TrainState = 3 };

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

}  // namespace detail

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::Codec;
  std::vector<std::int64_t> config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for write");
    os.write("LDSP", 4);
    detail::write_pod<std::uint32_t>(os, 1);
    detail::write_pod<std::uint32_t>(os, std::uint32_t(kind));
    detail::write_pod<std::uint32_t>(os, std::uint32_t(config.size()));
    for (auto c : config) detail::write_pod<std::int64_t>(os, c);
    detail::write_pod<std::uint64_t>(os, tensors.size());
    const bool wide = kind == CheckpointKind::TrainState;
    for (const auto& [name, t] : tensors) {
      detail::write_pod<std::uint16_t>(os, std::uint16_t(name.size()));
      os.write(name.data(), std::streamsize(name.size()));
      detail::write_pod<std::uint32_t>(os, std::uint32_t(t.rank()));
      for (auto d : t.shape()) detail::write_pod<std::uint32_t>(os, std::uint32_t(d));
      if (wide) {
        for (double v : t.raw()) detail::write_pod<double>(os, v);
      } else {
        for (double v : t.raw()) detail::write_pod<float>(os, float(v));
      }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LDSP", 4) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    auto version = detail::read_pod<std::uint32_t>(is);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    Checkpoint ck;
    ck.kind = CheckpointKind(detail::read_pod<std::uint32_t>(is));
    auto ncfg = detail::read_pod<std::uint32_t>(is);
    ck.config.resize(ncfg);
    for (auto& c : ck.config) c = detail::read_pod<std::int64_t>(is);
    auto np = detail::read_pod<std::uint64_t>(is);
    const bool wide = ck.kind == CheckpointKind::TrainState;
    for (std::uint64_t i = 0; i < np; ++i) {
      auto len = detail::read_pod<std::uint16_t>(is);
      std::string name(len, '\0');
      is.read(name.data(), len);
      auto rank = detail::read_pod<std::uint32_t>(is);
      std::vector<std::size_t> shape(rank);
      for (auto& d : shape) d = detail::read_pod<std::uint32_t>(is);
      Tensor t(shape);
      for (std::size_t j = 0; j < t.size(); ++j)
        t[j] = wide ? detail::read_pod<double>(is) : double(detail::read_pod<float>(is));
      ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
  }
};

inline void params_to_checkpoint(const ParamStore& p, Checkpoint& ck,
                                 const std::string& prefix = "") {
  for (std::size_t i = 0; i < p.count(); ++i)
    ck.tensors.emplace_back(prefix + p.name(i), p.value(i));
}

inline void params_from_checkpoint(ParamStore& p, const Checkpoint& ck,
                                   const std::string& prefix = "") {
  for (std::size_t i = 0; i < p.count(); ++i) {
    const Tensor& t = ck.tensor(prefix + p.name(i));
    if (!t.same_shape(p.value(i)))
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name(i));
    p.value(i) = t;
  }
}

}  // namespace ldsep
