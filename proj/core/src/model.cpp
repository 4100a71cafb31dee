#include "retinamatch/model.hpp"

#include <cmath>

#include "retinamatch/checkpoint.hpp"

namespace retina {

namespace {
constexpr float kNormEps = 1e-8f;
}

void validate(const ModelConfig& cfg) {
  if (cfg.descriptor_dim < 8)
    throw ConfigError("descriptor_dim must be >= 8, got " + std::to_string(cfg.descriptor_dim));
  if (cfg.base_channels < 8)
    throw ConfigError("base_channels must be >= 8, got " + std::to_string(cfg.base_channels));
}

void Model::build_layers() {
  const int b = cfg_.base_channels;
  const int d = cfg_.descriptor_dim;
  stem_ = Conv2d(1, b, 3);
  enc1a_ = Conv2d(b, 2 * b, 3);
  enc1b_ = Conv2d(2 * b, 2 * b, 3);
  enc2a_ = Conv2d(2 * b, 4 * b, 3);
  enc2b_ = Conv2d(4 * b, 4 * b, 3);
  enc3a_ = Conv2d(4 * b, 8 * b, 3);
  enc3b_ = Conv2d(8 * b, 8 * b, 3);
  det3a_ = Conv2d(8 * b, 4 * b, 3);
  det3b_ = Conv2d(4 * b, 4 * b, 3);
  det2a_ = Conv2d(12 * b, 2 * b, 3);
  det2b_ = Conv2d(2 * b, 2 * b, 3);
  det1a_ = Conv2d(6 * b, b, 3);
  det1b_ = Conv2d(b, b, 3);
  detf1_ = Conv2d(3 * b, b, 3);
  detf2_ = Conv2d(b, b, 3);
  detf3_ = Conv2d(b, 1, 1, 1, 0);
  desd_ = Conv2d(8 * b, d, 3, 2, 1);
  dest4_ = TConv2d(d, d);
  dest3_ = TConv2d(d, d);
  dest2_ = TConv2d(d, d);
  dest1_ = TConv2d(d, d);
}

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  validate(cfg);
  build_layers();
  Rng rng(seed);
  size_t last_fan_in = 1;
  for (auto& p : params()) {
    // He-normal weights; biases uniform in +-1/sqrt(fan_in). Nonzero biases
    // keep a constant input from collapsing the descriptor field to exact
    // zero vectors, which the unit-norm contract forbids.
    if (p.dims.size() == 1) {
      const double bound = 1.0 / std::sqrt(double(last_fan_in));
      for (auto& w : *p.w) w = float(rng.uniform(-bound, bound));
      continue;
    }
    size_t fan_in = 1;
    for (size_t i = 1; i < p.dims.size(); ++i) fan_in *= p.dims[i];
    last_fan_in = fan_in;
    const double std = std::sqrt(2.0 / double(fan_in));
    for (auto& w : *p.w) w = float(rng.normal() * std);
  }
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  auto add_conv = [&](const char* name, Conv2d& c) {
    out.push_back({std::string(name) + ".w",
                   {uint32_t(c.spec.cout), uint32_t(c.spec.cin), uint32_t(c.spec.k),
                    uint32_t(c.spec.k)},
                   &c.W,
                   &c.dW});
    out.push_back({std::string(name) + ".b", {uint32_t(c.spec.cout)}, &c.b, &c.db});
  };
  auto add_tconv = [&](const char* name, TConv2d& c) {
    // Stored in the role-swapped layout: (cin, cout, 4, 4).
    out.push_back({std::string(name) + ".w",
                   {uint32_t(c.cin), uint32_t(c.cout), 4u, 4u},
                   &c.W,
                   &c.dW});
    out.push_back({std::string(name) + ".b", {uint32_t(c.cout)}, &c.b, &c.db});
  };
  add_conv("stem", stem_);
  add_conv("enc1a", enc1a_);
  add_conv("enc1b", enc1b_);
  add_conv("enc2a", enc2a_);
  add_conv("enc2b", enc2b_);
  add_conv("enc3a", enc3a_);
  add_conv("enc3b", enc3b_);
  add_conv("det3a", det3a_);
  add_conv("det3b", det3b_);
  add_conv("det2a", det2a_);
  add_conv("det2b", det2b_);
  add_conv("det1a", det1a_);
  add_conv("det1b", det1b_);
  add_conv("detf1", detf1_);
  add_conv("detf2", detf2_);
  add_conv("detf3", detf3_);
  add_conv("desd", desd_);
  add_tconv("dest4", dest4_);
  add_tconv("dest3", dest3_);
  add_tconv("dest2", dest2_);
  add_tconv("dest1", dest1_);
  return out;
}

size_t Model::param_count() const {
  size_t n = 0;
  auto& self = const_cast<Model&>(*this);
  for (auto& p : self.params()) n += p.w->size();
  return n;
}

uint64_t Model::param_checksum() {
  uint64_t h = 1469598103934665603ull;
  for (auto& p : params()) {
    const uint64_t c = checksum(*p.w);
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void Model::zero_grad() {
  for (auto& p : params()) std::fill(p.g->begin(), p.g->end(), 0.f);
}

void Model::forward_t(const Tensor& x, Workspace& ws, ForwardProbe* probe) const {
  if (x.c != 1) throw ShapeError("forward: expected single-channel input");
  if (x.h % 16 || x.w % 16)
    throw ShapeError("forward: input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                     " not divisible by 16");
  ws.x = x;
  ws.e0 = stem_.forward(ws.x);
  relu_inplace(ws.e0);
  ws.s1a = enc1a_.forward(ws.e0);
  relu_inplace(ws.s1a);
  ws.a1 = enc1b_.forward(ws.s1a);
  relu_inplace(ws.a1);
  ws.p1 = maxpool2_forward(ws.a1, ws.am1);
  ws.s2a = enc2a_.forward(ws.p1);
  relu_inplace(ws.s2a);
  ws.a2 = enc2b_.forward(ws.s2a);
  relu_inplace(ws.a2);
  ws.p2 = maxpool2_forward(ws.a2, ws.am2);
  ws.s3a = enc3a_.forward(ws.p2);
  relu_inplace(ws.s3a);
  ws.a3 = enc3b_.forward(ws.s3a);
  relu_inplace(ws.a3);
  ws.F = maxpool2_forward(ws.a3, ws.am3);
  if (probe) {
    probe->f_c = ws.F.c;
    probe->f_h = ws.F.h;
    probe->f_w = ws.F.w;
  }

  // Detection decoder.
  ws.t3a = det3a_.forward(ws.F);
  relu_inplace(ws.t3a);
  ws.t3 = det3b_.forward(ws.t3a);
  relu_inplace(ws.t3);
  ws.c3 = concat_channels(bilinear_up2_forward(ws.t3), ws.a3);
  ws.t2a = det2a_.forward(ws.c3);
  relu_inplace(ws.t2a);
  ws.t2 = det2b_.forward(ws.t2a);
  relu_inplace(ws.t2);
  ws.c2 = concat_channels(bilinear_up2_forward(ws.t2), ws.a2);
  ws.t1a = det1a_.forward(ws.c2);
  relu_inplace(ws.t1a);
  ws.t1 = det1b_.forward(ws.t1a);
  relu_inplace(ws.t1);
  ws.c1 = concat_channels(bilinear_up2_forward(ws.t1), ws.a1);
  ws.f1 = detf1_.forward(ws.c1);
  relu_inplace(ws.f1);
  ws.f2 = detf2_.forward(ws.f1);
  relu_inplace(ws.f2);
  ws.P = detf3_.forward(ws.f2);
  sigmoid_inplace(ws.P);

  // Descriptor decoder.
  ws.g = desd_.forward(ws.F);
  relu_inplace(ws.g);
  ws.q4 = dest4_.forward(ws.g);
  relu_inplace(ws.q4);
  ws.q3 = dest3_.forward(ws.q4);
  relu_inplace(ws.q3);
  ws.q2 = dest2_.forward(ws.q3);
  relu_inplace(ws.q2);
  ws.q1 = dest1_.forward(ws.q2);
  ws.D = l2norm_forward(ws.q1, ws.norms, kNormEps);
}

void Model::backward_t(const Workspace& ws, const Tensor& dP, const Tensor& dD) {
  // Descriptor head.
  Tensor dq1 = l2norm_backward(ws.q1, ws.norms, dD, kNormEps);
  Tensor dq2 = dest1_.backward(ws.q2, dq1);
  dq2 = relu_backward(dq2, ws.q2);
  Tensor dq3 = dest2_.backward(ws.q3, dq2);
  dq3 = relu_backward(dq3, ws.q3);
  Tensor dq4 = dest3_.backward(ws.q4, dq3);
  dq4 = relu_backward(dq4, ws.q4);
  Tensor dg = dest4_.backward(ws.g, dq4);
  dg = relu_backward(dg, ws.g);
  Tensor dF = desd_.backward(ws.F, dg);

  // Detection head down to F, collecting skip gradients on the way.
  Tensor dlog = sigmoid_backward(dP, ws.P);
  Tensor df2 = detf3_.backward(ws.f2, dlog);
  df2 = relu_backward(df2, ws.f2);
  Tensor df1 = detf2_.backward(ws.f1, df2);
  df1 = relu_backward(df1, ws.f1);
  Tensor dc1 = detf1_.backward(ws.c1, df1);
  Tensor du1, da1;
  split_channels(dc1, cfg_.base_channels, du1, da1);
  Tensor dt1 = bilinear_up2_backward(du1);
  dt1 = relu_backward(dt1, ws.t1);
  Tensor dt1a = det1b_.backward(ws.t1a, dt1);
  dt1a = relu_backward(dt1a, ws.t1a);
  Tensor dc2 = det1a_.backward(ws.c2, dt1a);
  Tensor du2, da2;
  split_channels(dc2, 2 * cfg_.base_channels, du2, da2);
  Tensor dt2 = bilinear_up2_backward(du2);
  dt2 = relu_backward(dt2, ws.t2);
  Tensor dt2a = det2b_.backward(ws.t2a, dt2);
  dt2a = relu_backward(dt2a, ws.t2a);
  Tensor dc3 = det2a_.backward(ws.c3, dt2a);
  Tensor du3, da3;
  split_channels(dc3, 4 * cfg_.base_channels, du3, da3);
  Tensor dt3 = bilinear_up2_backward(du3);
  dt3 = relu_backward(dt3, ws.t3);
  Tensor dt3a = det3b_.backward(ws.t3a, dt3);
  dt3a = relu_backward(dt3a, ws.t3a);
  {
    Tensor dF_det = det3a_.backward(ws.F, dt3a);
    for (size_t i = 0; i < dF.v.size(); ++i) dF.v[i] += dF_det.v[i];
  }

  // Encoder.
  Tensor g3 = maxpool2_backward(dF, ws.am3, ws.a3.h, ws.a3.w);
  for (size_t i = 0; i < g3.v.size(); ++i) g3.v[i] += da3.v[i];
  g3 = relu_backward(g3, ws.a3);
  Tensor gs3 = enc3b_.backward(ws.s3a, g3);
  gs3 = relu_backward(gs3, ws.s3a);
  Tensor gp2 = enc3a_.backward(ws.p2, gs3);
  Tensor g2 = maxpool2_backward(gp2, ws.am2, ws.a2.h, ws.a2.w);
  for (size_t i = 0; i < g2.v.size(); ++i) g2.v[i] += da2.v[i];
  g2 = relu_backward(g2, ws.a2);
  Tensor gs2 = enc2b_.backward(ws.s2a, g2);
  gs2 = relu_backward(gs2, ws.s2a);
  Tensor gp1 = enc2a_.backward(ws.p1, gs2);
  Tensor g1 = maxpool2_backward(gp1, ws.am1, ws.a1.h, ws.a1.w);
  for (size_t i = 0; i < g1.v.size(); ++i) g1.v[i] += da1.v[i];
  g1 = relu_backward(g1, ws.a1);
  Tensor gs1 = enc1b_.backward(ws.s1a, g1);
  gs1 = relu_backward(gs1, ws.s1a);
  Tensor ge0 = enc1a_.backward(ws.e0, gs1);
  ge0 = relu_backward(ge0, ws.e0);
  stem_.backward(ws.x, ge0);  // input gradient discarded
}

ForwardResult Model::forward(const ImageGrid& img, ForwardProbe* probe) const {
  Workspace ws;
  forward_t(from_grid(img), ws, probe);
  ForwardResult r;
  r.P = to_grid(ws.P);
  r.D = to_field(ws.D);
  return r;
}

void Model::save(const std::string& path) const {
  Container c;
  c.version = kCheckpointVersion;
  c.tensors.push_back(
      TensorBlob::from_i64("config", {int64_t(cfg_.descriptor_dim), int64_t(cfg_.base_channels)}));
  auto& self = const_cast<Model&>(*this);
  for (auto& p : self.params())
    c.tensors.push_back(TensorBlob::from_floats(p.name, p.dims, p.w->data(), p.w->size()));
  write_container(path, c);
}

namespace {

Model load_into(const Container& c, const ModelConfig& cfg) {
  Model m(cfg, 0);
  for (auto& p : m.params()) {
    const TensorBlob& t = c.require(p.name);
    if (t.dims != p.dims) {
      std::string want, got;
      for (auto d : p.dims) want += std::to_string(d) + " ";
      for (auto d : t.dims) got += std::to_string(d) + " ";
      throw CheckpointShapeError("tensor " + p.name + ": file shape [ " + got +
                                 "] does not match model shape [ " + want + "]");
    }
    t.to_floats(p.w->data(), p.w->size());
  }
  return m;
}

}  // namespace

Model Model::load(const std::string& path) {
  Container c = read_container(path);
  const auto meta = c.require("config").as_i64();
  if (meta.size() != 2) throw CheckpointFormatError("config tensor must have 2 entries");
  ModelConfig cfg;
  cfg.descriptor_dim = int(meta[0]);
  cfg.base_channels = int(meta[1]);
  validate(cfg);
  return load_into(c, cfg);
}

Model Model::load(const std::string& path, const ModelConfig& cfg) {
  validate(cfg);
  return load_into(read_container(path), cfg);
}

}  // namespace retina
