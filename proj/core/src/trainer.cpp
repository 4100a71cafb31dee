#include "retinamatch/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "retinamatch/checkpoint.hpp"
#include "retinamatch/losses.hpp"
#include "retinamatch/matching.hpp"

namespace retina {

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  if (cfg.input_size <= 0 || cfg.input_size % 16 != 0)
    throw ConfigError("train: input_size must be a positive multiple of 16, got " +
                      std::to_string(cfg.input_size));
  if (!(cfg.lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (cfg.max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (cfg.batch_size != 1) throw ConfigError("train: only batch_size 1 is supported");
}

std::string stats_csv_header() { return "epoch,clf,geo,des,total,mean_yt,seconds"; }

std::string to_csv_row(const EpochStats& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", s.epoch, s.clf, s.geo, s.des,
                s.total, s.mean_yt, s.seconds);
  return buf;
}

Grid gaussian_blur(const Grid& g, double sigma) {
  if (sigma <= 1e-6) return g;
  const int r = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(size_t(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[size_t(i + r)] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
    sum += k[size_t(i + r)];
  }
  for (double& v : k) v /= sum;

  Grid tmp(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[size_t(i + r)] * g.at(y, std::clamp(x + i, 0, g.w - 1));
      tmp.at(y, x) = float(acc);
    }
  Grid out(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += k[size_t(i + r)] * tmp.at(std::clamp(y + i, 0, g.h - 1), x);
      out.at(y, x) = float(acc);
    }
  return out;
}

ImageGrid augment(const ImageGrid& img, Rng& rng, const AugmentConfig& cfg) {
  ImageGrid out = img;
  if (rng.uniform() < cfg.prob) {
    const double sigma = rng.uniform(0.0, cfg.blur_sigma_max);
    static_cast<Grid&>(out) = gaussian_blur(out, sigma);
  }
  if (rng.uniform() < cfg.prob) {
    const float s = float(rng.uniform(cfg.contrast.lo, cfg.contrast.hi));
    for (float& v : out.v) v = 0.5f + s * (v - 0.5f);
  }
  if (rng.uniform() < cfg.prob) {
    const float d = float(rng.uniform(-cfg.illumination, cfg.illumination));
    for (float& v : out.v) v += d;
  }
  for (float& v : out.v) v = std::clamp(v, 0.f, 1.f);
  return out;
}

AdamState AdamState::init(Model& model, double beta1, double beta2) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  for (auto& p : model.params()) {
    s.m.emplace_back(p.w->size(), 0.f);
    s.v.emplace_back(p.w->size(), 0.f);
  }
  return s;
}

void AdamState::apply(Model& model, double lr) {
  auto ps = model.params();
  ++step;
  const double bc1 = 1.0 - std::pow(beta1, double(step));
  const double bc2 = 1.0 - std::pow(beta2, double(step));
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    std::vector<float>& w = *ps[pi].w;
    const std::vector<float>& g = *ps[pi].g;
    std::vector<float>& mm = m[pi];
    std::vector<float>& vv = v[pi];
    for (size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      mm[i] = float(beta1 * mm[i] + (1.0 - beta1) * gi);
      vv[i] = float(beta2 * vv[i] + (1.0 - beta2) * gi * gi);
      const double mhat = mm[i] / bc1;
      const double vhat = vv[i] / bc2;
      w[i] = float(w[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

double clip_gradients(Model& model, double max_norm) {
  auto ps = model.params();
  double ss = 0.0;
  for (auto& p : ps)
    for (float g : *p.g) ss += double(g) * g;
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const float s = float(max_norm / norm);
    for (auto& p : ps)
      for (float& g : *p.g) g *= s;
  }
  return norm;
}

namespace {

void check_finite(double v, const char* component, const std::string& name, int epoch) {
  if (!std::isfinite(v))
    throw Error("train: non-finite " + std::string(component) + " on image '" + name +
                "' at epoch " + std::to_string(epoch) + "; aborting epoch");
}

ImageGrid warp_image(const ImageGrid& img, const Homography& H) {
  ImageGrid out = img;
  static_cast<Grid&>(out) = warp_grid(img, H, img.h, img.w);
  return out;
}

}  // namespace

EpochStats train_epoch(Model& model, const std::vector<TrainImage>& images, LabelStore& store,
                       AdamState& opt, Rng& rng, const TrainConfig& cfg, int epoch) {
  if (images.empty()) throw ConfigError("train_epoch: no images");
  if (store.images.size() != images.size())
    throw ConfigError("train_epoch: label store does not match the image list");
  const auto t0 = std::chrono::steady_clock::now();
  const int n = cfg.input_size;

  std::vector<int> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (int i = int(order.size()) - 1; i > 0; --i) {
    const int j = int(rng.uniform_int(uint64_t(i) + 1));
    std::swap(order[size_t(i)], order[size_t(j)]);
  }

  const bool expand = epoch >= cfg.pke.warmup_epochs;
  double clf_sum = 0.0, geo_sum = 0.0, des_sum = 0.0, total_sum = 0.0;
  int labeled_n = 0;
  Workspace wsA, wsB;
  Tensor dD, dDp;

  for (int idx : order) {
    const TrainImage& ti = images[idx];
    const ImageGrid ia = augment(ti.image, rng, cfg.augment);
    const Homography H = sample_homography(cfg.sampler, n, n, rng);
    const Homography Hinv = invert(H);
    const ImageGrid ib = augment(warp_image(ia, H), rng, cfg.augment);

    model.forward_t(from_grid(ia), wsA);
    model.forward_t(from_grid(ib), wsB);
    const Grid P = to_grid(wsA.P);
    const Grid Pp = to_grid(wsB.P);

    ImageLabels& lab = store.images[size_t(idx)];
    if (ti.labeled && expand) expand_from_maps(P, wsA.D, Pp, wsB.D, H, lab, cfg.pke);

    // Counterpart probability map pulled back into this image's frame.
    const Grid Pb = warp_grid(Pp, Hinv, n, n);
    Grid dP(n, n), dPb(n, n);
    double clf = 0.0, geo = 0.0;
    if (ti.labeled) {
      const SoftLabelMap T = soften_labels(lab.yt, n, n, cfg.label_sigma);
      const DetectionLoss dl = detection_loss_grad(P, T, Pb, &dP, &dPb);
      clf = dl.clf;
      geo = dl.geo;
      check_finite(clf, "classification loss", ti.name, epoch);
    } else {
      geo = dice_loss_grad(P, Pb, &dP, &dPb);
    }
    check_finite(geo, "geometric loss", ti.name, epoch);

    const KeypointSet kps = nms(P, cfg.pke.nms_window, cfg.pke.nms_threshold);
    if (!dD.same_shape(wsA.D)) {
      dD = Tensor(wsA.D.c, wsA.D.h, wsA.D.w);
      dDp = Tensor(wsA.D.c, wsA.D.h, wsA.D.w);
    } else {
      dD.zero();
      dDp.zero();
    }
    const DescriptionLoss dsl =
        description_loss_t(wsA.D, wsB.D, kps, H, cfg.margin, rng, &dD, &dDp);
    check_finite(dsl.value, "description loss", ti.name, epoch);

    const double total = clf + geo + dsl.value;
    clf_sum += clf;
    geo_sum += geo;
    des_sum += dsl.value;
    total_sum += total;
    if (ti.labeled) ++labeled_n;

    model.zero_grad();
    Tensor dP_t = from_grid(dP);
    Tensor dPp_t = from_grid(warp_grid_adjoint(dPb, Hinv, n, n));
    model.backward_t(wsA, dP_t, dD);
    model.backward_t(wsB, dPp_t, dDp);
    const double gnorm = clip_gradients(model, cfg.clip_norm);
    check_finite(gnorm, "gradient norm", ti.name, epoch);
    opt.apply(model, cfg.lr);
  }
  if (expand) store.t = epoch;

  EpochStats s;
  s.epoch = epoch;
  s.clf = labeled_n > 0 ? clf_sum / labeled_n : 0.0;
  s.geo = geo_sum / double(images.size());
  s.des = des_sum / double(images.size());
  s.total = total_sum / double(images.size());
  size_t yt_sum = 0;
  for (size_t i = 0; i < images.size(); ++i)
    if (images[i].labeled) yt_sum += store.images[i].yt.size();
  s.mean_yt = labeled_n > 0 ? double(yt_sum) / labeled_n : 0.0;
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return s;
}

Trainer::Trainer(const TrainConfig& cfg, std::vector<TrainImage> images)
    : cfg_(cfg), images_(std::move(images)), rng_(cfg.seed) {
  validate(cfg_);
  if (images_.empty()) throw ConfigError("train: image list is empty");
  bool any_labeled = false;
  for (const TrainImage& ti : images_) {
    if (ti.image.h != cfg_.input_size || ti.image.w != cfg_.input_size)
      throw ConfigError("train: image '" + ti.name + "' is " + std::to_string(ti.image.w) + "x" +
                        std::to_string(ti.image.h) + ", expected " +
                        std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size));
    if (ti.labeled && ti.y0.empty())
      throw ConfigError("train: labeled image '" + ti.name + "' has no keypoints");
    for (const Keypoint& k : ti.y0)
      if (!ti.image.in_bounds(k.x, k.y))
        throw ConfigError("train: keypoint out of bounds in image '" + ti.name + "'");
    any_labeled = any_labeled || ti.labeled;
  }
  if (!any_labeled) throw ConfigError("train: need at least one labeled image");

  model_ = Model(cfg_.model, cfg_.seed);
  std::vector<KeypointSet> y0s;
  y0s.reserve(images_.size());
  for (const TrainImage& ti : images_) y0s.push_back(ti.labeled ? ti.y0 : KeypointSet{});
  store_ = LabelStore::init(y0s, cfg_.pke.dedup_radius);
  adam_ = AdamState::init(model_, cfg_.beta1, cfg_.beta2);
}

EpochStats Trainer::run_epoch() {
  EpochStats s = train_epoch(model_, images_, store_, adam_, rng_, cfg_, epoch_);
  ++epoch_;
  history_.push_back(s);
  return s;
}

std::vector<EpochStats> Trainer::fit() {
  namespace fs = std::filesystem;
  const bool emit = !cfg_.out_dir.empty();
  std::ofstream csv;
  if (emit) {
    fs::create_directories(cfg_.out_dir);
    const std::string path = cfg_.out_dir + "/stats.csv";
    const bool fresh = epoch_ == 0 || !fs::exists(path);
    csv.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw IoError("train: cannot write " + path);
    if (fresh) csv << stats_csv_header() << "\n";
  }
  std::vector<EpochStats> out;
  while (epoch_ < cfg_.max_epochs) {
    out.push_back(run_epoch());
    if (emit) {
      csv << to_csv_row(out.back()) << "\n";
      csv.flush();
      if (cfg_.checkpoint_every > 0 && epoch_ % cfg_.checkpoint_every == 0 &&
          epoch_ < cfg_.max_epochs)
        save_state(cfg_.out_dir + "/state_epoch_" + std::to_string(epoch_) + ".ckpt");
    }
  }
  if (emit) {
    save_state(cfg_.out_dir + "/state_final.ckpt");
    model_.save(cfg_.out_dir + "/model.ckpt");
  }
  return out;
}

void Trainer::save_state(const std::string& path) const {
  Container c;
  c.version = kCheckpointVersion;
  c.tensors.push_back(TensorBlob::from_i64(
      "config", {int64_t(cfg_.model.descriptor_dim), int64_t(cfg_.model.base_channels)}));
  auto& self = const_cast<Trainer&>(*this);
  const std::vector<ParamRef> ps = self.model_.params();
  for (const ParamRef& p : ps)
    c.tensors.push_back(TensorBlob::from_floats(p.name, p.dims, p.w->data(), p.w->size()));
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    c.tensors.push_back(TensorBlob::from_floats("opt.m." + ps[pi].name, ps[pi].dims,
                                                adam_.m[pi].data(), adam_.m[pi].size()));
    c.tensors.push_back(TensorBlob::from_floats("opt.v." + ps[pi].name, ps[pi].dims,
                                                adam_.v[pi].data(), adam_.v[pi].size()));
  }
  c.tensors.push_back(TensorBlob::from_i64("opt.step", {adam_.step}));
  c.tensors.push_back(TensorBlob::from_i64("epoch", {int64_t(epoch_)}));
  c.tensors.push_back(TensorBlob::from_string("rng", rng_.save_state()));
  write_container(path, c);
}

Trainer Trainer::load_state(const std::string& path, const TrainConfig& cfg,
                            std::vector<TrainImage> images) {
  Trainer t(cfg, std::move(images));
  const Container c = read_container(path);
  t.model_ = Model::load(path, cfg.model);
  auto ps = t.model_.params();
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    c.require("opt.m." + ps[pi].name).to_floats(t.adam_.m[pi].data(), t.adam_.m[pi].size());
    c.require("opt.v." + ps[pi].name).to_floats(t.adam_.v[pi].data(), t.adam_.v[pi].size());
  }
  t.adam_.step = c.require("opt.step").as_i64().at(0);
  t.epoch_ = int(c.require("epoch").as_i64().at(0));
  t.rng_.load_state(c.require("rng").as_string());
  return t;
}

std::pair<Model, std::vector<EpochStats>> fit(const TrainConfig& cfg,
                                              const std::vector<TrainImage>& labeled,
                                              const std::vector<TrainImage>& unlabeled) {
  std::vector<TrainImage> all;
  all.reserve(labeled.size() + unlabeled.size());
  for (TrainImage ti : labeled) {
    ti.labeled = true;
    all.push_back(std::move(ti));
  }
  for (TrainImage ti : unlabeled) {
    ti.labeled = false;
    ti.y0.clear();
    all.push_back(std::move(ti));
  }
  Trainer t(cfg, std::move(all));
  std::vector<EpochStats> stats = t.fit();
  return {std::move(t.model()), std::move(stats)};
}

}  // namespace retina
