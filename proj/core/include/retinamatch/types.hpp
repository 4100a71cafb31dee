#pragma once

// Shared containers and error types.
//
// Coordinate convention used throughout the library: (x, y) = (column, row),
// origin at the center of the top-left pixel. Grids are stored row-major.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace retina {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Single-channel raster, row-major, values addressed as at(y, x).
template <typename T>
struct GridT {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  GridT() = default;
  GridT(int h_, int w_, T fill = T(0)) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

  T& at(int y, int x) { return v[size_t(y) * w + x]; }
  const T& at(int y, int x) const { return v[size_t(y) * w + x]; }
  size_t size() const { return v.size(); }
  bool in_bounds(int x, int y) const { return x >= 0 && x < w && y >= 0 && y < h; }
  bool same_shape(const GridT& o) const { return h == o.h && w == o.w; }
};

using Grid = GridT<float>;
using DetectionMap = GridT<float>;
using SoftLabelMap = GridT<float>;

/// Network input image in [0,1]. Remembers the pre-resize dimensions so that
/// keypoints and homographies can be mapped back to native resolution.
struct ImageGrid : GridT<float> {
  int native_w = 0;
  int native_h = 0;

  ImageGrid() = default;
  ImageGrid(int h_, int w_, float fill = 0.f) : GridT<float>(h_, w_, fill), native_w(w_), native_h(h_) {}

  double scale_x() const { return native_w > 0 ? double(native_w) / w : 1.0; }
  double scale_y() const { return native_h > 0 ? double(native_h) / h : 1.0; }
};

struct Keypoint {
  int x = 0;
  int y = 0;
  float score = 0.f;
};

inline bool operator==(const Keypoint& a, const Keypoint& b) {
  return a.x == b.x && a.y == b.y;
}

using KeypointSet = std::vector<Keypoint>;

/// Dense per-pixel descriptors; d floats per pixel, pixel-major layout so the
/// vector at (y, x) is contiguous.
template <typename T>
struct FieldT {
  int h = 0;
  int w = 0;
  int d = 0;
  std::vector<T> v;

  FieldT() = default;
  FieldT(int h_, int w_, int d_, T fill = T(0))
      : h(h_), w(w_), d(d_), v(size_t(h_) * w_ * d_, fill) {}

  T* at(int y, int x) { return v.data() + (size_t(y) * w + x) * d; }
  const T* at(int y, int x) const { return v.data() + (size_t(y) * w + x) * d; }
  size_t size() const { return v.size(); }
};

using DescriptorField = FieldT<float>;

}  // namespace retina
