#pragma once

// Single-file checkpoint format:
//   magic "GGBCKPT1" | u32 version | u64 config hash | i64 step | u64 seed
//   u32 tensor count | manifest entries | raw little-endian payloads
//   trailing u32 crc32 over everything before it
// Manifest entry: u16 name length, name bytes, u8 dtype, u8 ndim,
// i64 dims[ndim], u64 payload offset, u64 payload bytes.
//
// Every parameter contributes four tensors: its value, the two Adam
// moments, and the Adam step count. Serialization order is the parameter
// collection order, so saving, loading and saving again is byte-identical.

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "ggb/training.hpp"

namespace ggb {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'G', 'G', 'B', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kVersion = 1;

template <class T>
constexpr std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 1;
  else if constexpr (std::is_same_v<T, double>) return 2;
  else return 0;
}
inline constexpr std::uint8_t kDtypeI64 = 3;

struct Writer {
  std::vector<unsigned char> bytes;
  template <class V>
  void put(V v) {
    unsigned char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    bytes.insert(bytes.end(), buf, buf + sizeof(V));
  }
  void put_raw(const void* p, std::size_t n) {
    const unsigned char* c = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
};

struct Reader {
  const unsigned char* p;
  const unsigned char* end;
  template <class V>
  V get() {
    if (p + sizeof(V) > end) throw CheckpointError("checkpoint truncated");
    V v;
    std::memcpy(&v, p, sizeof(V));
    p += sizeof(V);
    return v;
  }
  void get_raw(void* dst, std::size_t n) {
    if (p + n > end) throw CheckpointError("checkpoint truncated");
    std::memcpy(dst, p, n);
    p += n;
  }
};

struct NamedTensor {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  std::vector<unsigned char> payload;
};

template <class T>
std::vector<unsigned char> to_bytes(const std::vector<T>& v) {
  std::vector<unsigned char> out(v.size() * sizeof(T));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

template <class T>
void collect_tensors(TrainState<T>& st, std::vector<NamedTensor>& out) {
  for (Param<T>* p : st.all_params()) {
    p->adam.ensure_size(static_cast<std::size_t>(p->value.numel()));
    out.push_back({p->name, dtype_code<T>(), p->value.shape(), to_bytes(p->value.vec())});
    out.push_back({p->name + ".adam_m", dtype_code<T>(), p->value.shape(), to_bytes(p->adam.m)});
    out.push_back({p->name + ".adam_v", dtype_code<T>(), p->value.shape(), to_bytes(p->adam.v)});
    std::vector<std::int64_t> t{p->adam.t};
    out.push_back({p->name + ".adam_t", kDtypeI64, {1}, to_bytes(t)});
  }
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(TrainState<T>& st, const std::string& path) {
  using namespace ckpt_detail;
  std::vector<NamedTensor> tensors;
  collect_tensors(st, tensors);

  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(st.cfg.hash());
  w.put<std::int64_t>(st.step);
  w.put<std::uint64_t>(st.cfg.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));

  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_raw(t.name.data(), t.name.size());
    w.put<std::uint8_t>(t.dtype);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::int64_t>(d);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(t.payload.size());
    offset += t.payload.size();
  }
  for (const auto& t : tensors) w.put_raw(t.payload.data(), t.payload.size());

  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, w.bytes.data(), static_cast<uInt>(w.bytes.size())));
  w.put<std::uint32_t>(crc);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open checkpoint for write: " + path);
  os.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<long>(w.bytes.size()));
  if (!os) throw CheckpointError("checkpoint write failed: " + path);
}

// Restores parameters, optimizer state and step count into a state built
// from the same config. Config mismatches and corruption are hard errors.
template <class T>
void load_checkpoint(TrainState<T>& st, const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kMagic) + 4) throw CheckpointError("checkpoint too small: " + path);

  const std::uint32_t stored_crc_at = static_cast<std::uint32_t>(bytes.size()) - 4;
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + stored_crc_at, 4);
  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(stored_crc_at)));
  if (crc != stored_crc) throw CheckpointError("checkpoint checksum mismatch: " + path);

  Reader r{bytes.data(), bytes.data() + stored_crc_at};
  char magic[8];
  r.get_raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError("not a checkpoint file: " + path);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " unsupported");
  const auto cfg_hash = r.get<std::uint64_t>();
  if (cfg_hash != st.cfg.hash())
    throw CheckpointError("checkpoint config hash mismatch: file was written by a different run "
                          "configuration");
  const auto step = r.get<std::int64_t>();
  (void)r.get<std::uint64_t>();  // seed, already covered by the config hash
  const auto count = r.get<std::uint32_t>();

  struct Entry {
    std::uint8_t dtype;
    Shape shape;
    std::uint64_t offset, nbytes;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name(name_len, '\0');
    r.get_raw(name.data(), name_len);
    Entry e;
    e.dtype = r.get<std::uint8_t>();
    const auto ndim = r.get<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(r.get<std::int64_t>()));
    e.offset = r.get<std::uint64_t>();
    e.nbytes = r.get<std::uint64_t>();
    entries[std::move(name)] = std::move(e);
  }
  const unsigned char* payload = r.p;
  const std::size_t payload_bytes = static_cast<std::size_t>(r.end - r.p);

  auto read_vec = [&](const std::string& name, std::uint8_t dtype, const Shape& want_shape,
                      auto* out_vec) {
    auto it = entries.find(name);
    if (it == entries.end()) throw CheckpointError("checkpoint missing tensor: " + name);
    const Entry& e = it->second;
    if (e.dtype != dtype) throw CheckpointError("checkpoint dtype mismatch for " + name);
    if (!want_shape.empty() && e.shape != want_shape)
      throw CheckpointError("checkpoint shape mismatch for " + name + ": file " + shape_str(e.shape) +
                            " vs model " + shape_str(want_shape));
    using V = typename std::remove_pointer_t<decltype(out_vec)>::value_type;
    const std::size_t n = e.nbytes / sizeof(V);
    if (e.offset + e.nbytes > payload_bytes) throw CheckpointError("checkpoint payload truncated");
    out_vec->resize(n);
    std::memcpy(out_vec->data(), payload + e.offset, e.nbytes);
  };

  std::size_t used = 0;
  for (Param<T>* p : st.all_params()) {
    std::vector<T> value;
    read_vec(p->name, dtype_code<T>(), p->value.shape(), &value);
    p->value = Tensor<T>::from_data(p->value.shape(), std::move(value), true);
    read_vec(p->name + ".adam_m", dtype_code<T>(), p->value.shape(), &p->adam.m);
    read_vec(p->name + ".adam_v", dtype_code<T>(), p->value.shape(), &p->adam.v);
    std::vector<std::int64_t> t;
    read_vec(p->name + ".adam_t", kDtypeI64, {1}, &t);
    p->adam.t = t.at(0);
    used += 4;
  }
  if (used != entries.size())
    throw CheckpointError("checkpoint holds " + std::to_string(entries.size()) +
                          " tensors but the model expects " + std::to_string(used));
  st.step = step;
}

}  // namespace ggb
