#pragma once

// Binary container for named tensors, used for model checkpoints and trainer
// state. Layout (little-endian):
//
//   magic   "SRTN" (4 bytes)
//   u32     format version
//   u32     tensor count
//   per tensor, in order:
//     u16   name length, then the name bytes
//     u8    dtype (0 = f32, 1 = i64, 2 = u8)
//     u8    rank, then rank * u32 dims
//   per tensor, in the same order: the raw payload bytes
//
// Loads fail with distinct error types for a bad magic/malformed header, an
// unsupported version, and a file shorter than the header promises; shape
// mismatches against an expected manifest are reported by the callers that
// know what shapes they want.

#include <cstdint>
#include <string>
#include <vector>

#include "retinamatch/types.hpp"

namespace retina {

struct CheckpointError : Error {
  using Error::Error;
};
struct CheckpointFormatError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointShapeError : CheckpointError {
  using CheckpointError::CheckpointError;
};

enum class DType : uint8_t { F32 = 0, I64 = 1, U8 = 2 };

size_t dtype_size(DType t);

struct TensorBlob {
  std::string name;
  DType dtype = DType::F32;
  std::vector<uint32_t> dims;
  std::vector<char> bytes;

  size_t elem_count() const;

  static TensorBlob from_floats(const std::string& name, std::vector<uint32_t> dims,
                                const float* data, size_t n);
  static TensorBlob from_i64(const std::string& name, const std::vector<int64_t>& values);
  static TensorBlob from_string(const std::string& name, const std::string& text);

  void to_floats(float* out, size_t n) const;  // throws CheckpointShapeError on count mismatch
  std::vector<int64_t> as_i64() const;
  std::string as_string() const;
};

struct Container {
  uint32_t version = 1;
  std::vector<TensorBlob> tensors;

  const TensorBlob* find(const std::string& name) const;
  /// find() that throws CheckpointFormatError when the tensor is absent.
  const TensorBlob& require(const std::string& name) const;
};

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'R', 'T', 'N'};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace retina
