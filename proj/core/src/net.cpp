#include "retinamatch/net.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>

namespace retina {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// Strip size for im2col buffers: keep K * N under ~4M floats (16 MB) so the
// scratch space stays small even for the full-resolution layers.
constexpr size_t kColBudget = size_t(4) << 20;

int strip_rows(int K, int wo) {
  size_t per_row = size_t(K) * wo;
  int rows = per_row == 0 ? 1 : int(kColBudget / per_row);
  return rows < 1 ? 1 : rows;
}

void check_conv_input(const ConvSpec& s, const Tensor& x, const char* who) {
  if (x.c != s.cin)
    throw ShapeError(std::string(who) + ": input has " + std::to_string(x.c) + " channels, want " +
                     std::to_string(s.cin));
  if (s.out_h(x.h) < 1 || s.out_w(x.w) < 1)
    throw ShapeError(std::string(who) + ": input " + std::to_string(x.h) + "x" +
                     std::to_string(x.w) + " too small for kernel");
}

// Fill `col` (K x n, column-major) with the patches feeding output rows
// [r0, r1). Out-of-image taps read as zero.
void im2col(const ConvSpec& s, const Tensor& x, int r0, int r1, float* col) {
  const int K = s.cin * s.k * s.k;
  const int wo = s.out_w(x.w);
  size_t n = 0;
  for (int oy = r0; oy < r1; ++oy) {
    for (int ox = 0; ox < wo; ++ox, ++n) {
      float* dst = col + n * K;
      for (int ci = 0; ci < s.cin; ++ci) {
        const float* plane = x.plane(ci);
        for (int ky = 0; ky < s.k; ++ky) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= x.h) {
            for (int kx = 0; kx < s.k; ++kx) *dst++ = 0.f;
            continue;
          }
          const float* row = plane + size_t(iy) * x.w;
          for (int kx = 0; kx < s.k; ++kx) {
            const int ix = ox * s.stride - s.pad + kx;
            *dst++ = (ix < 0 || ix >= x.w) ? 0.f : row[ix];
          }
        }
      }
    }
  }
}

// Scatter-add the column buffer back into dx (adjoint of im2col).
void col2im(const ConvSpec& s, int r0, int r1, const float* col, Tensor& dx) {
  const int K = s.cin * s.k * s.k;
  const int wo = s.out_w(dx.w);
  size_t n = 0;
  for (int oy = r0; oy < r1; ++oy) {
    for (int ox = 0; ox < wo; ++ox, ++n) {
      const float* src = col + n * K;
      for (int ci = 0; ci < s.cin; ++ci) {
        float* plane = dx.plane(ci);
        for (int ky = 0; ky < s.k; ++ky) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= dx.h) {
            src += s.k;
            continue;
          }
          float* row = plane + size_t(iy) * dx.w;
          for (int kx = 0; kx < s.k; ++kx, ++src) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < dx.w) row[ix] += *src;
          }
        }
      }
    }
  }
}

}  // namespace

void conv_forward(const ConvSpec& s, const std::vector<float>& W, const std::vector<float>& b,
                  const Tensor& x, Tensor& y) {
  check_conv_input(s, x, "conv_forward");
  const int ho = s.out_h(x.h), wo = s.out_w(x.w);
  const int K = s.cin * s.k * s.k;
  y = Tensor(s.cout, ho, wo);

  const int rows = strip_rows(K, wo);
  std::vector<float> col(size_t(K) * rows * wo);
  Eigen::Map<const RowMat> Wm(W.data(), s.cout, K);
  for (int r0 = 0; r0 < ho; r0 += rows) {
    const int r1 = std::min(ho, r0 + rows);
    const int n = (r1 - r0) * wo;
    im2col(s, x, r0, r1, col.data());
    Eigen::Map<const ColMat> X(col.data(), K, n);
    // Planes of y are not contiguous across the strip, so multiply into a
    // scratch block and copy per channel while adding the bias.
    static thread_local std::vector<float> out;
    out.resize(size_t(s.cout) * n);
    Eigen::Map<RowMat> O(out.data(), s.cout, n);
    O.noalias() = Wm * X;
    for (int co = 0; co < s.cout; ++co) {
      float* dst = y.plane(co) + size_t(r0) * wo;
      const float* src = out.data() + size_t(co) * n;
      const float bias = b.empty() ? 0.f : b[co];
      for (int i = 0; i < n; ++i) dst[i] = src[i] + bias;
    }
  }
}

void conv_backward_data(const ConvSpec& s, const std::vector<float>& W, const Tensor& dy,
                        Tensor& dx) {
  if (dy.c != s.cout) throw ShapeError("conv_backward_data: dy channel mismatch");
  const int ho = dy.h, wo = dy.w;
  const int K = s.cin * s.k * s.k;
  dx.zero();

  const int rows = strip_rows(K, wo);
  std::vector<float> col(size_t(K) * rows * wo);
  static thread_local std::vector<float> gbuf;
  Eigen::Map<const RowMat> Wm(W.data(), s.cout, K);
  for (int r0 = 0; r0 < ho; r0 += rows) {
    const int r1 = std::min(ho, r0 + rows);
    const int n = (r1 - r0) * wo;
    gbuf.resize(size_t(s.cout) * n);
    for (int co = 0; co < s.cout; ++co)
      std::memcpy(gbuf.data() + size_t(co) * n, dy.plane(co) + size_t(r0) * wo,
                  size_t(n) * sizeof(float));
    Eigen::Map<const RowMat> G(gbuf.data(), s.cout, n);
    Eigen::Map<ColMat> X(col.data(), K, n);
    X.noalias() = Wm.transpose() * G;
    col2im(s, r0, r1, col.data(), dx);
  }
}

void conv_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy,
                           std::vector<float>& dW, std::vector<float>& db) {
  check_conv_input(s, x, "conv_backward_weights");
  const int ho = dy.h, wo = dy.w;
  const int K = s.cin * s.k * s.k;

  const int rows = strip_rows(K, wo);
  std::vector<float> col(size_t(K) * rows * wo);
  static thread_local std::vector<float> gbuf;
  Eigen::Map<RowMat> dWm(dW.data(), s.cout, K);
  for (int r0 = 0; r0 < ho; r0 += rows) {
    const int r1 = std::min(ho, r0 + rows);
    const int n = (r1 - r0) * wo;
    im2col(s, x, r0, r1, col.data());
    gbuf.resize(size_t(s.cout) * n);
    for (int co = 0; co < s.cout; ++co)
      std::memcpy(gbuf.data() + size_t(co) * n, dy.plane(co) + size_t(r0) * wo,
                  size_t(n) * sizeof(float));
    Eigen::Map<const RowMat> G(gbuf.data(), s.cout, n);
    Eigen::Map<const ColMat> X(col.data(), K, n);
    dWm.noalias() += G * X.transpose();
  }
  if (!db.empty()) {
    for (int co = 0; co < s.cout; ++co) {
      const float* p = dy.plane(co);
      double sum = 0.0;
      for (size_t i = 0; i < dy.plane_size(); ++i) sum += p[i];
      db[co] += float(sum);
    }
  }
}

Conv2d::Conv2d(int cin, int cout, int k, int stride, int pad) {
  spec = ConvSpec{cin, cout, k, stride, pad < 0 ? k / 2 : pad};
  W.assign(size_t(cout) * cin * k * k, 0.f);
  b.assign(cout, 0.f);
  dW.assign(W.size(), 0.f);
  db.assign(b.size(), 0.f);
}

void Conv2d::init_he(Rng& rng) {
  const double fan_in = double(spec.cin) * spec.k * spec.k;
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& w : W) w = float(rng.normal() * std);
  std::fill(b.begin(), b.end(), 0.f);
}

void Conv2d::zero_grad() {
  std::fill(dW.begin(), dW.end(), 0.f);
  std::fill(db.begin(), db.end(), 0.f);
}

Tensor Conv2d::forward(const Tensor& x) const {
  Tensor y;
  conv_forward(spec, W, b, x, y);
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy) {
  conv_backward_weights(spec, x, dy, dW, db);
  Tensor dx(spec.cin, x.h, x.w);
  conv_backward_data(spec, W, dy, dx);
  return dx;
}

TConv2d::TConv2d(int cin_, int cout_) : cin(cin_), cout(cout_) {
  W.assign(size_t(cin) * cout * 16, 0.f);
  b.assign(cout, 0.f);
  dW.assign(W.size(), 0.f);
  db.assign(b.size(), 0.f);
}

ConvSpec TConv2d::swapped_spec() const {
  // The conv whose backward-data pass realizes this transposed conv: it maps
  // a (cout, 2h, 2w) tensor down to (cin, h, w) with kernel 4, stride 2, pad 1.
  return ConvSpec{cout, cin, 4, 2, 1};
}

void TConv2d::init_he(Rng& rng) {
  const double fan_in = double(cin) * 16;
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& w : W) w = float(rng.normal() * std);
  std::fill(b.begin(), b.end(), 0.f);
}

void TConv2d::zero_grad() {
  std::fill(dW.begin(), dW.end(), 0.f);
  std::fill(db.begin(), db.end(), 0.f);
}

Tensor TConv2d::forward(const Tensor& x) const {
  if (x.c != cin) throw ShapeError("TConv2d: input channel mismatch");
  Tensor y(cout, x.h * 2, x.w * 2);
  conv_backward_data(swapped_spec(), W, x, y);
  for (int co = 0; co < cout; ++co) {
    float* p = y.plane(co);
    const float bias = b[co];
    for (size_t i = 0; i < y.plane_size(); ++i) p[i] += bias;
  }
  return y;
}

Tensor TConv2d::backward(const Tensor& x, const Tensor& dy) {
  // Role swap: dy plays the conv input, x plays the conv output gradient.
  // Bias handling is not role-symmetric, so skip it in the shared routine
  // and accumulate db directly from dy.
  std::vector<float> no_bias;
  conv_backward_weights(swapped_spec(), dy, x, dW, no_bias);
  for (int co = 0; co < cout; ++co) {
    const float* p = dy.plane(co);
    double sum = 0.0;
    for (size_t i = 0; i < dy.plane_size(); ++i) sum += p[i];
    db[co] += float(sum);
  }
  Tensor dx;
  conv_forward(swapped_spec(), W, {}, dy, dx);
  return dx;
}

Tensor maxpool2_forward(const Tensor& x, std::vector<int32_t>& argmax) {
  if (x.h % 2 || x.w % 2) throw ShapeError("maxpool2: odd spatial size");
  Tensor y(x.c, x.h / 2, x.w / 2);
  argmax.resize(y.size());
  size_t o = 0;
  for (int ci = 0; ci < x.c; ++ci) {
    const float* plane = x.plane(ci);
    for (int oy = 0; oy < y.h; ++oy) {
      for (int ox = 0; ox < y.w; ++ox, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        int32_t bi = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int32_t idx = (oy * 2 + dy) * x.w + ox * 2 + dx;
            if (plane[idx] > best) {
              best = plane[idx];
              bi = idx;
            }
          }
        y.v[o] = best;
        argmax[o] = bi;
      }
    }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, int in_h, int in_w) {
  Tensor dx(dy.c, in_h, in_w);
  size_t o = 0;
  for (int ci = 0; ci < dy.c; ++ci) {
    float* plane = dx.plane(ci);
    const size_t n = dy.plane_size();
    const float* g = dy.plane(ci);
    for (size_t i = 0; i < n; ++i, ++o) plane[argmax[o]] += g[i];
  }
  return dx;
}

namespace {

// Tap table for 2x bilinear upsampling with half-pixel centers: output index
// 2i samples source i-0.25, output 2i+1 samples i+0.25.
void up2_taps(int out, int in, std::vector<int>& i0, std::vector<int>& i1, std::vector<float>& w0) {
  i0.resize(out);
  i1.resize(out);
  w0.resize(out);
  for (int o = 0; o < out; ++o) {
    const double s = (o + 0.5) / 2.0 - 0.5;
    int lo = int(std::floor(s));
    const double f = s - lo;
    int hi = lo + 1;
    if (lo < 0) lo = 0;
    if (hi > in - 1) hi = in - 1;
    if (lo > in - 1) lo = in - 1;
    i0[o] = lo;
    i1[o] = hi;
    w0[o] = float(1.0 - f);
  }
}

}  // namespace

Tensor bilinear_up2_forward(const Tensor& x) {
  Tensor y(x.c, x.h * 2, x.w * 2);
  std::vector<int> y0, y1, x0, x1;
  std::vector<float> wy, wx;
  up2_taps(y.h, x.h, y0, y1, wy);
  up2_taps(y.w, x.w, x0, x1, wx);
  for (int ci = 0; ci < x.c; ++ci) {
    const float* src = x.plane(ci);
    float* dst = y.plane(ci);
    for (int oy = 0; oy < y.h; ++oy) {
      const float* r0 = src + size_t(y0[oy]) * x.w;
      const float* r1 = src + size_t(y1[oy]) * x.w;
      const float a = wy[oy];
      for (int ox = 0; ox < y.w; ++ox) {
        const float bxw = wx[ox];
        const float top = r0[x0[ox]] * bxw + r0[x1[ox]] * (1.f - bxw);
        const float bot = r1[x0[ox]] * bxw + r1[x1[ox]] * (1.f - bxw);
        *dst++ = top * a + bot * (1.f - a);
      }
    }
  }
  return y;
}

Tensor bilinear_up2_backward(const Tensor& dy) {
  if (dy.h % 2 || dy.w % 2) throw ShapeError("bilinear_up2_backward: odd spatial size");
  Tensor dx(dy.c, dy.h / 2, dy.w / 2);
  std::vector<int> y0, y1, x0, x1;
  std::vector<float> wy, wx;
  up2_taps(dy.h, dx.h, y0, y1, wy);
  up2_taps(dy.w, dx.w, x0, x1, wx);
  for (int ci = 0; ci < dy.c; ++ci) {
    const float* g = dy.plane(ci);
    float* dst = dx.plane(ci);
    for (int oy = 0; oy < dy.h; ++oy) {
      float* r0 = dst + size_t(y0[oy]) * dx.w;
      float* r1 = dst + size_t(y1[oy]) * dx.w;
      const float a = wy[oy];
      for (int ox = 0; ox < dy.w; ++ox) {
        const float go = *g++;
        const float bxw = wx[ox];
        r0[x0[ox]] += go * a * bxw;
        r0[x1[ox]] += go * a * (1.f - bxw);
        r1[x0[ox]] += go * (1.f - a) * bxw;
        r1[x1[ox]] += go * (1.f - a) * (1.f - bxw);
      }
    }
  }
  return dx;
}

void relu_inplace(Tensor& t) {
  for (auto& x : t.v)
    if (x < 0.f) x = 0.f;
}

Tensor relu_backward(const Tensor& dy, const Tensor& y) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i)
    if (y.v[i] <= 0.f) dx.v[i] = 0.f;
  return dx;
}

void sigmoid_inplace(Tensor& t) {
  for (auto& x : t.v) {
    if (x >= 0.f) {
      x = 1.f / (1.f + std::exp(-x));
    } else {
      const float e = std::exp(x);
      x = e / (1.f + e);
    }
  }
}

Tensor sigmoid_backward(const Tensor& dy, const Tensor& y) {
  Tensor dx = dy;
  for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= y.v[i] * (1.f - y.v[i]);
  return dx;
}

Tensor l2norm_forward(const Tensor& x, std::vector<float>& norms, float eps) {
  Tensor y(x.c, x.h, x.w);
  norms.resize(x.plane_size());
  for (size_t p = 0; p < x.plane_size(); ++p) {
    double ss = 0.0;
    for (int ci = 0; ci < x.c; ++ci) {
      const float v = x.v[size_t(ci) * x.plane_size() + p];
      ss += double(v) * v;
    }
    const float n = float(std::sqrt(ss));
    norms[p] = n;
    const float inv = 1.f / (n + eps);
    for (int ci = 0; ci < x.c; ++ci) {
      const size_t idx = size_t(ci) * x.plane_size() + p;
      y.v[idx] = x.v[idx] * inv;
    }
  }
  return y;
}

Tensor l2norm_backward(const Tensor& x, const std::vector<float>& norms, const Tensor& dy,
                       float eps) {
  Tensor dx(x.c, x.h, x.w);
  for (size_t p = 0; p < x.plane_size(); ++p) {
    const float n = norms[p];
    const float inv = 1.f / (n + eps);
    double dot = 0.0;
    for (int ci = 0; ci < x.c; ++ci) {
      const size_t idx = size_t(ci) * x.plane_size() + p;
      dot += double(dy.v[idx]) * x.v[idx];
    }
    // d/dx [x / (n + eps)] with n = ||x||: dy/(n+eps) - x * <dy,x> / (n (n+eps)^2).
    const float scale = n > 1e-20f ? float(dot) / (n * (n + eps) * (n + eps)) : 0.f;
    for (int ci = 0; ci < x.c; ++ci) {
      const size_t idx = size_t(ci) * x.plane_size() + p;
      dx.v[idx] = dy.v[idx] * inv - x.v[idx] * scale;
    }
  }
  return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("concat_channels: spatial mismatch");
  Tensor y(a.c + b.c, a.h, a.w);
  std::memcpy(y.v.data(), a.v.data(), a.size() * sizeof(float));
  std::memcpy(y.v.data() + a.size(), b.v.data(), b.size() * sizeof(float));
  return y;
}

void split_channels(const Tensor& dy, int ca, Tensor& da, Tensor& db) {
  da = Tensor(ca, dy.h, dy.w);
  db = Tensor(dy.c - ca, dy.h, dy.w);
  std::memcpy(da.v.data(), dy.v.data(), da.size() * sizeof(float));
  std::memcpy(db.v.data(), dy.v.data() + da.size(), db.size() * sizeof(float));
}

}  // namespace retina
