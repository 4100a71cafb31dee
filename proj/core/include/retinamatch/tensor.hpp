#pragma once

// Dense float tensor in channel-major (C,H,W) layout, the internal currency
// of the network. Public detection/descriptor results use the row-major Grid
// and pixel-major DescriptorField from types.hpp.

#include <cstdint>
#include <vector>

#include "retinamatch/types.hpp"

namespace retina {

struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, float fill = 0.f)
      : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, fill) {}

  size_t size() const { return v.size(); }
  size_t plane_size() const { return size_t(h) * w; }
  float* plane(int ci) { return v.data() + size_t(ci) * plane_size(); }
  const float* plane(int ci) const { return v.data() + size_t(ci) * plane_size(); }
  float& at(int ci, int y, int x) { return v[(size_t(ci) * h + y) * w + x]; }
  const float& at(int ci, int y, int x) const { return v[(size_t(ci) * h + y) * w + x]; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  void zero() { std::fill(v.begin(), v.end(), 0.f); }
};

Tensor from_grid(const Grid& g);
Grid to_grid(const Tensor& t);  // requires c == 1

Tensor from_field(const DescriptorField& f);  // HWC -> CHW
DescriptorField to_field(const Tensor& t);    // CHW -> HWC

/// FNV-1a over the raw float bytes; used for determinism checks.
uint64_t checksum(const std::vector<float>& v);

}  // namespace retina
