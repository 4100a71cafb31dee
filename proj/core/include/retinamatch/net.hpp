#pragma once

// Minimal CNN layer library: 2-d convolution (im2col + GEMM), transposed
// convolution, 2x2 max pooling, fixed-weight bilinear upsampling and the
// usual pointwise activations. Everything is single-threaded and
// deterministic; each layer exposes the exact forward/backward pair used by
// the trainer so layers can be finite-difference checked in isolation.

#include <string>
#include <vector>

#include "retinamatch/rng.hpp"
#include "retinamatch/tensor.hpp"

namespace retina {

struct ConvSpec {
  int cin = 0;
  int cout = 0;
  int k = 3;
  int stride = 1;
  int pad = 1;

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }
};

// Weights are row-major (cout, cin*k*k); the inner index runs ci, ky, kx.
void conv_forward(const ConvSpec& s, const std::vector<float>& W, const std::vector<float>& b,
                  const Tensor& x, Tensor& y);
void conv_backward_data(const ConvSpec& s, const std::vector<float>& W, const Tensor& dy,
                        Tensor& dx);
void conv_backward_weights(const ConvSpec& s, const Tensor& x, const Tensor& dy,
                           std::vector<float>& dW, std::vector<float>& db);

/// Convolution layer owning weights and gradient accumulators.
struct Conv2d {
  ConvSpec spec;
  std::vector<float> W, b, dW, db;

  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride = 1, int pad = -1);

  void init_he(Rng& rng);
  void zero_grad();
  Tensor forward(const Tensor& x) const;
  /// Accumulates into dW/db and returns the input gradient.
  Tensor backward(const Tensor& x, const Tensor& dy);
};

/// Transposed convolution, kernel 4, stride 2, pad 1: doubles h and w.
/// Implemented by running the ordinary convolution routines with the
/// input/output roles swapped, so it shares the (tested) conv engine.
struct TConv2d {
  int cin = 0, cout = 0;
  std::vector<float> W, b, dW, db;  // W laid out for the role-swapped conv

  TConv2d() = default;
  TConv2d(int cin_, int cout_);

  ConvSpec swapped_spec() const;  // the conv that maps output-shape -> input-shape
  void init_he(Rng& rng);
  void zero_grad();
  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy);
};

/// 2x2 max pooling, stride 2. Requires even h and w. `argmax` records the
/// flat input index of each maximum (first-in-scan-order on ties) so the
/// backward pass routes gradients deterministically.
Tensor maxpool2_forward(const Tensor& x, std::vector<int32_t>& argmax);
Tensor maxpool2_backward(const Tensor& dy, const std::vector<int32_t>& argmax, int in_h, int in_w);

/// Fixed-weight bilinear 2x upsampling (half-pixel centers, clamped borders).
Tensor bilinear_up2_forward(const Tensor& x);
Tensor bilinear_up2_backward(const Tensor& dy);

void relu_inplace(Tensor& t);
/// dx given dy and the *post-activation* output y.
Tensor relu_backward(const Tensor& dy, const Tensor& y);

void sigmoid_inplace(Tensor& t);
Tensor sigmoid_backward(const Tensor& dy, const Tensor& y);

/// Per-pixel L2 normalization across channels: y = x / (||x|| + eps).
Tensor l2norm_forward(const Tensor& x, std::vector<float>& norms, float eps);
Tensor l2norm_backward(const Tensor& x, const std::vector<float>& norms, const Tensor& dy,
                       float eps);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& dy, int ca, Tensor& da, Tensor& db);

}  // namespace retina
