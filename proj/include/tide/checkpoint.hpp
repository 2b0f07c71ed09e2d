#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tide/optimizer.hpp"
#include "tide/param.hpp"

namespace tide {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned, length-prefixed binary container: a manifest of named tensors
// with explicit shapes followed by little-endian 64-bit payloads.
// save -> load -> save yields identical bytes.
namespace ckpt_detail {

constexpr char kMagic[8] = {'T', 'I', 'D', 'E', 'C', 'K', 'P', '1'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& o, uint32_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& o, uint64_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_i64(std::ostream& o, int64_t v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_string(std::ostream& o, const std::string& s) {
  write_u32(o, static_cast<uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_tensor(std::ostream& o, const std::string& name, const Tensor& t) {
  write_string(o, name);
  write_u32(o, static_cast<uint32_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u32(o, static_cast<uint32_t>(t.dim(i)));
  write_u64(o, static_cast<uint64_t>(t.size()));
  o.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CheckpointError("checkpoint: truncated file");
  return v;
}
inline uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CheckpointError("checkpoint: truncated file");
  return v;
}
inline int64_t read_i64(std::istream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw CheckpointError("checkpoint: truncated file");
  return v;
}
inline std::string read_string(std::istream& in) {
  const uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw CheckpointError("checkpoint: truncated file");
  return s;
}
inline std::pair<std::string, Tensor> read_tensor(std::istream& in) {
  const std::string name = read_string(in);
  const uint32_t ndim = read_u32(in);
  std::vector<int> shape;
  for (uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(read_u32(in)));
  const uint64_t count = read_u64(in);
  Tensor t(shape);
  if (static_cast<uint64_t>(t.size()) != count)
    throw CheckpointError("checkpoint: shape/count mismatch for " + name);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw CheckpointError("checkpoint: truncated payload for " + name);
  return {name, t};
}

}  // namespace ckpt_detail

struct CheckpointMeta {
  std::string config_text;
  uint64_t seed = 0;
  int64_t step = 0;
};

inline void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                            const ParamRegistry& reg, const AdamW* opt) {
  using namespace ckpt_detail;
  std::ofstream o(path, std::ios::binary);
  if (!o) throw CheckpointError("checkpoint: cannot write " + path);
  o.write(kMagic, 8);
  write_u32(o, kVersion);
  write_u64(o, meta.seed);
  write_i64(o, meta.step);
  write_string(o, meta.config_text);
  uint32_t entries = static_cast<uint32_t>(reg.params.size() + reg.buffers.size());
  if (opt) entries += static_cast<uint32_t>(2 * reg.params.size()) + 1;
  write_u32(o, entries);
  for (const Parameter* p : reg.params) write_tensor(o, "param:" + p->name, p->value);
  for (const Buffer* b : reg.buffers) write_tensor(o, "buffer:" + b->name, b->value);
  if (opt) {
    for (size_t i = 0; i < reg.params.size(); ++i) {
      write_tensor(o, "opt.m:" + reg.params[i]->name, opt->m[i]);
      write_tensor(o, "opt.v:" + reg.params[i]->name, opt->v[i]);
    }
    Tensor st({1});
    st[0] = static_cast<double>(opt->step_count);
    write_tensor(o, "opt.step", st);
  }
}

// Restores parameters, buffers and optimizer state into an existing model.
inline CheckpointMeta load_checkpoint(const std::string& path, ParamRegistry& reg, AdamW* opt) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(in);
  if (version != kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointMeta meta;
  meta.seed = read_u64(in);
  meta.step = read_i64(in);
  meta.config_text = read_string(in);
  const uint32_t entries = read_u32(in);
  for (uint32_t e = 0; e < entries; ++e) {
    auto [name, tensor] = read_tensor(in);
    bool placed = false;
    if (name.rfind("param:", 0) == 0) {
      const std::string pname = name.substr(6);
      for (Parameter* p : reg.params)
        if (p->name == pname) {
          if (!p->value.same_shape(tensor))
            throw CheckpointError("checkpoint: shape mismatch for " + pname +
                                  " (config/checkpoint disagree)");
          p->value = tensor;
          placed = true;
          break;
        }
    } else if (name.rfind("buffer:", 0) == 0) {
      const std::string bname = name.substr(7);
      for (Buffer* b : reg.buffers)
        if (b->name == bname) {
          if (!b->value.same_shape(tensor))
            throw CheckpointError("checkpoint: shape mismatch for buffer " + bname);
          b->value = tensor;
          placed = true;
          break;
        }
    } else if (name.rfind("opt.m:", 0) == 0 || name.rfind("opt.v:", 0) == 0) {
      if (!opt) continue;
      const bool is_m = name[4] == 'm';
      const std::string pname = name.substr(6);
      for (size_t i = 0; i < reg.params.size(); ++i)
        if (reg.params[i]->name == pname) {
          (is_m ? opt->m : opt->v)[i] = tensor;
          placed = true;
          break;
        }
    } else if (name == "opt.step") {
      if (opt) opt->step_count = static_cast<long long>(tensor[0]);
      placed = true;
    }
    if (!placed && name.rfind("opt.", 0) != 0)
      throw CheckpointError("checkpoint: unknown tensor " + name +
                            " (config/checkpoint mismatch)");
  }
  return meta;
}

}  // namespace tide
