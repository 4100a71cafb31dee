#include "retinamatch/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace retina {

size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32:
      return 4;
    case DType::I64:
      return 8;
    case DType::U8:
      return 1;
  }
  throw CheckpointFormatError("unknown dtype");
}

size_t TensorBlob::elem_count() const {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  return n;
}

TensorBlob TensorBlob::from_floats(const std::string& name, std::vector<uint32_t> dims,
                                   const float* data, size_t n) {
  TensorBlob b;
  b.name = name;
  b.dtype = DType::F32;
  b.dims = std::move(dims);
  b.bytes.resize(n * 4);
  std::memcpy(b.bytes.data(), data, n * 4);
  return b;
}

TensorBlob TensorBlob::from_i64(const std::string& name, const std::vector<int64_t>& values) {
  TensorBlob b;
  b.name = name;
  b.dtype = DType::I64;
  b.dims = {uint32_t(values.size())};
  b.bytes.resize(values.size() * 8);
  std::memcpy(b.bytes.data(), values.data(), b.bytes.size());
  return b;
}

TensorBlob TensorBlob::from_string(const std::string& name, const std::string& text) {
  TensorBlob b;
  b.name = name;
  b.dtype = DType::U8;
  b.dims = {uint32_t(text.size())};
  b.bytes.assign(text.begin(), text.end());
  return b;
}

void TensorBlob::to_floats(float* out, size_t n) const {
  if (dtype != DType::F32)
    throw CheckpointShapeError("tensor " + name + ": expected f32 payload");
  if (elem_count() != n)
    throw CheckpointShapeError("tensor " + name + ": file has " + std::to_string(elem_count()) +
                               " values, expected " + std::to_string(n));
  std::memcpy(out, bytes.data(), n * 4);
}

std::vector<int64_t> TensorBlob::as_i64() const {
  if (dtype != DType::I64) throw CheckpointShapeError("tensor " + name + ": expected i64 payload");
  std::vector<int64_t> out(elem_count());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::string TensorBlob::as_string() const {
  if (dtype != DType::U8) throw CheckpointShapeError("tensor " + name + ": expected u8 payload");
  return std::string(bytes.begin(), bytes.end());
}

const TensorBlob* Container::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const TensorBlob& Container::require(const std::string& name) const {
  const TensorBlob* t = find(name);
  if (!t) throw CheckpointFormatError("missing tensor: " + name);
  return *t;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointTruncatedError("unexpected end of file");
  return v;
}

}  // namespace

void write_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os.write(kCheckpointMagic, 4);
  put<uint32_t>(os, c.version);
  put<uint32_t>(os, uint32_t(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.name.size() > 0xffff) throw CheckpointFormatError("tensor name too long: " + t.name);
    put<uint16_t>(os, uint16_t(t.name.size()));
    os.write(t.name.data(), std::streamsize(t.name.size()));
    put<uint8_t>(os, uint8_t(t.dtype));
    put<uint8_t>(os, uint8_t(t.dims.size()));
    for (uint32_t d : t.dims) put<uint32_t>(os, d);
    if (t.bytes.size() != t.elem_count() * dtype_size(t.dtype))
      throw CheckpointFormatError("tensor " + t.name + ": payload size does not match dims");
  }
  for (const auto& t : c.tensors) os.write(t.bytes.data(), std::streamsize(t.bytes.size()));
  os.flush();
  if (!os) throw IoError("write failed: " + path);
}

Container read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw CheckpointFormatError("bad magic in " + path);
  Container c;
  c.version = get<uint32_t>(is);
  if (c.version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(c.version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");
  const uint32_t count = get<uint32_t>(is);
  if (count > 1u << 20) throw CheckpointFormatError("implausible tensor count");
  c.tensors.resize(count);
  for (auto& t : c.tensors) {
    const uint16_t len = get<uint16_t>(is);
    t.name.resize(len);
    is.read(t.name.data(), len);
    if (!is) throw CheckpointTruncatedError("unexpected end of file");
    t.dtype = DType(get<uint8_t>(is));
    dtype_size(t.dtype);  // validates
    const uint8_t rank = get<uint8_t>(is);
    t.dims.resize(rank);
    for (auto& d : t.dims) d = get<uint32_t>(is);
  }
  for (auto& t : c.tensors) {
    const size_t n = t.elem_count() * dtype_size(t.dtype);
    if (n > size_t(1) << 32) throw CheckpointFormatError("implausible tensor size: " + t.name);
    t.bytes.resize(n);
    is.read(t.bytes.data(), std::streamsize(n));
    if (size_t(is.gcount()) != n) throw CheckpointTruncatedError("truncated payload for " + t.name);
  }
  return c;
}

}  // namespace retina
