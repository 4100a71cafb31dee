#pragma once

// The two-headed detection/description network: a shared convolutional
// encoder that downsamples 3x to a compact feature map F, a U-Net style
// detection decoder that climbs back to full resolution through bilinear
// upsampling and encoder skip connections (ending in a sigmoid probability
// map), and a descriptor decoder that first compresses to h/16 and then
// learns its way back to a full-resolution field of unit-norm d-vectors
// through transposed convolutions.

#include <string>
#include <vector>

#include "retinamatch/net.hpp"
#include "retinamatch/tensor.hpp"
#include "retinamatch/types.hpp"

namespace retina {

struct ModelConfig {
  int descriptor_dim = 256;
  int base_channels = 16;
};

/// Throws ConfigError unless descriptor_dim >= 8 and base_channels >= 8.
void validate(const ModelConfig& cfg);

/// Reference to one parameter tensor; the registry drives init, the
/// optimizer, gradient clipping and checkpoint IO in one fixed order.
struct ParamRef {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float>* w = nullptr;
  std::vector<float>* g = nullptr;
};

/// Shapes of the shared feature map F, fillable during forward for tests.
struct ForwardProbe {
  int f_c = 0, f_h = 0, f_w = 0;
};

struct ForwardResult {
  DetectionMap P;
  DescriptorField D;
};

/// Every intermediate activation needed by the backward pass.
struct Workspace {
  Tensor x, e0;
  Tensor s1a, a1, p1, s2a, a2, p2, s3a, a3, F;
  std::vector<int32_t> am1, am2, am3;
  Tensor t3a, t3, c3, t2a, t2, c2, t1a, t1, c1, f1, f2, P;
  Tensor g, q4, q3, q2, q1, D;
  std::vector<float> norms;
};

class Model {
 public:
  Model() = default;
  Model(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  std::vector<ParamRef> params();
  size_t param_count() const;
  uint64_t param_checksum();

  /// Inference entry point. Input values are expected in [0,1]; throws
  /// ShapeError unless both dimensions are divisible by 16.
  ForwardResult forward(const ImageGrid& img, ForwardProbe* probe = nullptr) const;

  /// Training-path forward: fills `ws` with all intermediates.
  void forward_t(const Tensor& x, Workspace& ws, ForwardProbe* probe = nullptr) const;
  /// Accumulates parameter gradients for d(loss)/dP and d(loss)/dD.
  /// `dP` is 1 x h x w, `dD` is d x h x w (gradients w.r.t. the normalized D).
  void backward_t(const Workspace& ws, const Tensor& dP, const Tensor& dD);

  void zero_grad();

  void save(const std::string& path) const;
  static Model load(const std::string& path);
  /// Load enforcing a caller-supplied config; a file whose tensors do not
  /// match throws CheckpointShapeError naming the first offending tensor.
  static Model load(const std::string& path, const ModelConfig& cfg);

 private:
  ModelConfig cfg_;

  Conv2d stem_;
  Conv2d enc1a_, enc1b_, enc2a_, enc2b_, enc3a_, enc3b_;
  Conv2d det3a_, det3b_, det2a_, det2b_, det1a_, det1b_;
  Conv2d detf1_, detf2_, detf3_;
  Conv2d desd_;
  TConv2d dest4_, dest3_, dest2_, dest1_;

  void build_layers();
};

}  // namespace retina
