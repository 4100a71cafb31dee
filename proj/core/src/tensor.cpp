#include "retinamatch/tensor.hpp"

namespace retina {

Tensor from_grid(const Grid& g) {
  Tensor t(1, g.h, g.w);
  t.v = g.v;
  return t;
}

Grid to_grid(const Tensor& t) {
  if (t.c != 1) throw ShapeError("to_grid: tensor has " + std::to_string(t.c) + " channels, want 1");
  Grid g(t.h, t.w);
  g.v = t.v;
  return g;
}

Tensor from_field(const DescriptorField& f) {
  Tensor t(f.d, f.h, f.w);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      const float* src = f.at(y, x);
      for (int ci = 0; ci < f.d; ++ci) t.at(ci, y, x) = src[ci];
    }
  return t;
}

DescriptorField to_field(const Tensor& t) {
  DescriptorField f(t.h, t.w, t.c);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) {
      float* dst = f.at(y, x);
      for (int ci = 0; ci < t.c; ++ci) dst[ci] = t.at(ci, y, x);
    }
  return f;
}

uint64_t checksum(const std::vector<float>& v) {
  uint64_t h = 1469598103934665603ull;
  const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
  for (size_t i = 0; i < v.size() * sizeof(float); ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace retina
