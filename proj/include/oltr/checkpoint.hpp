#pragma once

// Binary checkpoint: a versioned, self-describing tensor table.
//
//   "OLTRCKPT"                       8 bytes
//   u32 version
//   u64 length, bytes                config snapshot (serialize() text)
//   i64 epoch, i64 step, i64 centroid version
//   u32 tensor count
//   per tensor: u32 name length, name, u32 rank, u64 dims[rank], f64 data (row-major)
//
// Integers and doubles are little-endian. Tensor names: "params.<name>",
// "velocity.<name>" and "memory.centroids" (absent for the plain baseline).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "oltr/training.hpp"

namespace oltr {

inline constexpr char kCheckpointMagic[8] = {'O', 'L', 'T', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

using TensorTable = std::map<std::string, Tensor>;

namespace detail {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(std::string("checkpoint: truncated ") + what);
  return v;
}

inline std::string get_string(std::istream& in, std::uint64_t n, const char* what) {
  if (n > (1ull << 30)) throw CheckpointError(std::string("checkpoint: implausible length for ") + what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw CheckpointError(std::string("checkpoint: truncated ") + what);
  return s;
}

inline Tensor to_tensor(const TensorView& v) {
  Tensor t;
  if (v.cols == 1) {
    t.dims = {static_cast<std::uint64_t>(v.rows)};
  } else {
    t.dims = {static_cast<std::uint64_t>(v.rows), static_cast<std::uint64_t>(v.cols)};
  }
  // Eigen storage is column-major; the file is row-major.
  t.data.resize(v.data.size());
  for (std::size_t r = 0; r < static_cast<std::size_t>(v.rows); ++r)
    for (std::size_t c = 0; c < static_cast<std::size_t>(v.cols); ++c) t.data[r * v.cols + c] = v.data[c * v.rows + r];
  return t;
}

inline void from_tensor(const std::string& name, const Tensor& t, TensorView v) {
  const bool vec_ok = v.cols == 1 && t.dims.size() == 1 && t.dims[0] == static_cast<std::uint64_t>(v.rows);
  const bool mat_ok = t.dims.size() == 2 && t.dims[0] == static_cast<std::uint64_t>(v.rows) &&
                      t.dims[1] == static_cast<std::uint64_t>(v.cols);
  if (!vec_ok && !mat_ok) throw CheckpointError("checkpoint: tensor " + name + " has the wrong shape");
  for (std::size_t r = 0; r < static_cast<std::size_t>(v.rows); ++r)
    for (std::size_t c = 0; c < static_cast<std::size_t>(v.cols); ++c) v.data[c * v.rows + r] = t.data[r * v.cols + c];
}

}  // namespace detail

struct Checkpoint {
  std::string config_text;
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::int64_t centroid_version = 0;
  TensorTable tensors;
};

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::put<std::uint32_t>(out, kCheckpointVersion);
    detail::put<std::uint64_t>(out, ck.config_text.size());
    out.write(ck.config_text.data(), static_cast<std::streamsize>(ck.config_text.size()));
    detail::put<std::int64_t>(out, ck.epoch);
    detail::put<std::int64_t>(out, ck.step);
    detail::put<std::int64_t>(out, ck.centroid_version);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
      for (auto d : t.dims) detail::put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("missing checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path.string());
  const auto version = detail::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_text = detail::get_string(in, detail::get<std::uint64_t>(in, "config length"), "config");
  ck.epoch = detail::get<std::int64_t>(in, "epoch");
  ck.step = detail::get<std::int64_t>(in, "step");
  ck.centroid_version = detail::get<std::int64_t>(in, "centroid version");
  const auto count = detail::get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::get_string(in, detail::get<std::uint32_t>(in, "name length"), "tensor name");
    Tensor t;
    const auto rank = detail::get<std::uint32_t>(in, "rank");
    if (rank > 8) throw CheckpointError("checkpoint: implausible rank for " + name);
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(detail::get<std::uint64_t>(in, "dims"));
      n *= t.dims.back();
    }
    if (n > (1ull << 32)) throw CheckpointError("checkpoint: implausible size for " + name);
    t.data.resize(n);
    if (n && !in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(n * sizeof(double))))
      throw CheckpointError("checkpoint: truncated tensor " + name);
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

inline Checkpoint to_checkpoint(const ModelState& s, const Config& c) {
  Checkpoint ck;
  ck.config_text = serialize(c);
  ck.epoch = s.epoch;
  ck.step = s.step;
  ck.centroid_version = s.memory.version;
  auto params = s.params;
  auto velocity = s.velocity;
  params.visit([&](const std::string& n, TensorView v) { ck.tensors["params." + n] = detail::to_tensor(v); });
  velocity.visit([&](const std::string& n, TensorView v) { ck.tensors["velocity." + n] = detail::to_tensor(v); });
  if (s.memory.num_classes() > 0) {
    Mat m = s.memory.centroids;
    ck.tensors["memory.centroids"] = detail::to_tensor(view(m));
  }
  return ck;
}

/// Rebuilds a state; shapes come from the checkpoint's own config snapshot.
inline std::pair<ModelState, Config> from_checkpoint(const Checkpoint& ck) {
  const Config c = validate_config(parse_config_text(ck.config_text));
  const ModelOptions o = ModelOptions::from_config(c);
  std::mt19937_64 rng(0);
  ModelState s;
  s.params = ModelParams::random(o, rng);
  s.velocity = s.params.zeros_like();
  std::size_t used = 0;
  auto load = [&](const std::string& prefix) {
    return [&, prefix](const std::string& n, TensorView v) {
      auto it = ck.tensors.find(prefix + n);
      if (it == ck.tensors.end()) throw CheckpointError("checkpoint: missing tensor " + prefix + n);
      detail::from_tensor(it->first, it->second, v);
      ++used;
    };
  };
  s.params.visit(load("params."));
  s.velocity.visit(load("velocity."));
  if (auto it = ck.tensors.find("memory.centroids"); it != ck.tensors.end()) {
    if (it->second.dims.size() != 2) throw CheckpointError("checkpoint: memory.centroids must be a matrix");
    s.memory.centroids = Mat(static_cast<Eigen::Index>(it->second.dims[0]), static_cast<Eigen::Index>(it->second.dims[1]));
    detail::from_tensor(it->first, it->second, view(s.memory.centroids));
    ++used;
  } else if (!o.baseline) {
    throw CheckpointError("checkpoint: missing tensor memory.centroids");
  }
  if (used != ck.tensors.size()) throw CheckpointError("checkpoint: unexpected extra tensors");
  s.memory.version = ck.centroid_version;
  s.epoch = static_cast<int>(ck.epoch);
  s.step = ck.step;
  return {std::move(s), c};
}

inline void save_state(const std::filesystem::path& path, const ModelState& s, const Config& c) {
  write_checkpoint(path, to_checkpoint(s, c));
}

inline std::pair<ModelState, Config> load_state(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path));
}

}  // namespace oltr
