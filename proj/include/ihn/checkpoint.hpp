#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ihn/common.hpp"
#include "ihn/optim.hpp"
#include "ihn/tensor.hpp"

namespace ihn {

// Checkpoint container, little-endian throughout:
//
//   bytes 0..7   magic "IHNCKPT1"
//   u32          parameter count
//   per parameter, in order:
//     u16        name length, then name bytes (UTF-8)
//     u8         ndim, then ndim x u32 dims
//     u8         dtype (0 = f32, 1 = f64)
//     u64        byte offset of the blob, relative to the end of the manifest
//   blobs        raw little-endian parameter data at the stated offsets
//
// Round-trips are bit-exact.

namespace detail {

inline void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename U>
void put_le(std::string& out, U v) {
  unsigned char b[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  put_bytes(out, b, sizeof(U));
}

template <typename U>
U get_le(const std::string& in, size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CorruptManifest("checkpoint truncated");
  U v = 0;
  for (size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

template <typename T>
constexpr uint8_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const ParamStore<T>& params) {
  std::string manifest;
  std::string blobs;
  detail::put_bytes(manifest, "IHNCKPT1", 8);
  detail::put_le<uint32_t>(manifest, static_cast<uint32_t>(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const TensorT<T>& t = params.tensor(i);
    detail::put_le<uint16_t>(manifest, static_cast<uint16_t>(name.size()));
    detail::put_bytes(manifest, name.data(), name.size());
    detail::put_le<uint8_t>(manifest, static_cast<uint8_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d)
      detail::put_le<uint32_t>(manifest, static_cast<uint32_t>(t.dim(d)));
    detail::put_le<uint8_t>(manifest, detail::dtype_code<T>());
    detail::put_le<uint64_t>(manifest, static_cast<uint64_t>(blobs.size()));
    // Values are already little-endian on every supported platform.
    detail::put_bytes(blobs, t.data(), t.numel() * sizeof(T));
  }
  return manifest + blobs;
}

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& params) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  const std::string bytes = serialize_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write on checkpoint: " + path);
}

// Loads into an existing store; names, shapes and dtype must match exactly.
template <typename T>
void load_checkpoint(const std::string& path, ParamStore<T>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile("checkpoint not found: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  size_t pos = 0;
  if (bytes.size() < 12 || bytes.compare(0, 8, "IHNCKPT1") != 0)
    throw CorruptManifest("bad checkpoint magic: " + path);
  pos = 8;
  const uint32_t count = detail::get_le<uint32_t>(bytes, pos);
  if (count != params.size())
    throw CorruptManifest("checkpoint parameter count mismatch: " + path);

  struct Rec {
    std::string name;
    std::vector<int> shape;
    uint8_t dtype;
    uint64_t offset;
  };
  std::vector<Rec> recs(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t nlen = detail::get_le<uint16_t>(bytes, pos);
    if (pos + nlen > bytes.size()) throw CorruptManifest("checkpoint truncated");
    recs[i].name.assign(bytes, pos, nlen);
    pos += nlen;
    const uint8_t ndim = detail::get_le<uint8_t>(bytes, pos);
    recs[i].shape.resize(ndim);
    for (uint8_t d = 0; d < ndim; ++d)
      recs[i].shape[d] = static_cast<int>(detail::get_le<uint32_t>(bytes, pos));
    recs[i].dtype = detail::get_le<uint8_t>(bytes, pos);
    recs[i].offset = detail::get_le<uint64_t>(bytes, pos);
  }
  const size_t blob_base = pos;

  for (uint32_t i = 0; i < count; ++i) {
    TensorT<T>& t = params.tensor(i);
    if (recs[i].name != params.name(i))
      throw CorruptManifest("checkpoint parameter name mismatch: expected " + params.name(i) +
                            ", found " + recs[i].name);
    if (recs[i].shape != t.shape())
      throw CorruptManifest("checkpoint shape mismatch for " + recs[i].name);
    if (recs[i].dtype != detail::dtype_code<T>())
      throw CorruptManifest("checkpoint dtype mismatch for " + recs[i].name);
    const size_t nbytes = t.numel() * sizeof(T);
    const size_t start = blob_base + recs[i].offset;
    if (start + nbytes > bytes.size()) throw CorruptManifest("checkpoint blob out of range");
    std::memcpy(t.data(), bytes.data() + start, nbytes);
  }
}

// Manifest fingerprint: parameter names and shapes only, independent of the
// values. Used by eval to reject a checkpoint built from a different config.
template <typename T>
uint64_t manifest_fingerprint(const ParamStore<T>& params) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (size_t i = 0; i < params.size(); ++i) {
    h = fnv1a(params.name(i), h);
    for (int d = 0; d < params.tensor(i).ndim(); ++d) {
      const int v = params.tensor(i).dim(d);
      h = fnv1a(&v, sizeof(v), h);
    }
  }
  return h;
}

}  // namespace ihn
