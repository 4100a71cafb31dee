#include "retinamatch/pke.hpp"

#include <cmath>

#include "retinamatch/matching.hpp"

namespace retina {

LabelStore LabelStore::init(const std::vector<KeypointSet>& y0s, int dedup_radius) {
  LabelStore s;
  s.dedup_radius = dedup_radius;
  s.images.resize(y0s.size());
  for (size_t i = 0; i < y0s.size(); ++i) {
    ImageLabels& L = s.images[i];
    L.y0 = dedup_union({}, y0s[i], dedup_radius);
    L.yt = L.y0;
  }
  return s;
}

size_t LabelStore::mean_y0() const {
  if (images.empty()) return 0;
  size_t n = 0;
  for (const auto& L : images) n += L.y0.size();
  return n / images.size();
}

size_t LabelStore::total_yt() const {
  size_t n = 0;
  for (const auto& L : images) n += L.yt.size();
  return n;
}

KeypointSet geometric_filter(const KeypointSet& cands, const Grid& pwarp, double prob_threshold) {
  KeypointSet out;
  for (const auto& kp : cands) {
    if (!pwarp.in_bounds(kp.x, kp.y)) continue;
    if (double(pwarp.at(kp.y, kp.x)) > prob_threshold) out.push_back(kp);
  }
  return out;
}

KeypointSet content_filter_t(const KeypointSet& cands, const Tensor& D, const Tensor& Dp,
                             const Homography& H, double ratio_threshold) {
  if (!D.same_shape(Dp)) throw ShapeError("content_filter: descriptor shape mismatch");
  const int d = D.c, h = D.h, w = D.w;
  const size_t plane = size_t(h) * w;

  // Gather each candidate's descriptor and its projected correspondent.
  struct Entry {
    Keypoint kp;
    std::vector<float> a, b;
  };
  std::vector<Entry> entries;
  for (const auto& kp : cands) {
    if (kp.x < 0 || kp.x >= w || kp.y < 0 || kp.y >= h)
      throw ShapeError("content_filter: candidate out of bounds");
    const Eigen::Vector2d q = H.apply(kp.x, kp.y);
    if (q.x() < 0.0 || q.x() > w - 1 || q.y() < 0.0 || q.y() > h - 1) continue;
    int x0 = std::min(int(std::floor(q.x())), w - 2);
    int y0 = std::min(int(std::floor(q.y())), h - 2);
    if (x0 < 0) x0 = 0;
    if (y0 < 0) y0 = 0;
    const float wx = float(1.0 - (q.x() - x0));
    const float wy = float(1.0 - (q.y() - y0));
    Entry e;
    e.kp = kp;
    e.a.resize(d);
    e.b.resize(d);
    const size_t base = size_t(kp.y) * w + kp.x;
    const size_t tap = size_t(y0) * w + x0;
    for (int ci = 0; ci < d; ++ci) {
      const float* pd = D.v.data() + size_t(ci) * plane;
      const float* pp = Dp.v.data() + size_t(ci) * plane;
      e.a[ci] = pd[base];
      const float top = pp[tap] * wx + pp[tap + 1] * (1.f - wx);
      const float bot = pp[tap + w] * wx + pp[tap + w + 1] * (1.f - wx);
      e.b[ci] = top * wy + bot * (1.f - wy);
    }
    entries.push_back(std::move(e));
  }

  const int n = int(entries.size());
  KeypointSet out;
  if (n == 0) return out;
  std::vector<std::vector<float>> avecs(n), bvecs(n);
  for (int i = 0; i < n; ++i) {
    avecs[i] = entries[i].a;
    bvecs[i] = entries[i].b;
  }
  const std::vector<double> dist = pairwise_l2(avecs, bvecs);
  if (n == 1) {
    // No second neighbor to test against: absolute-distance fallback.
    if (dist[0] < 0.1) out.push_back(entries[0].kp);
    return out;
  }
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      const double dd = dist[size_t(i) * n + j];
      if (dd < d1) {
        d2 = d1;
        d1 = dd;
        best = j;
      } else if (dd < d2) {
        d2 = dd;
      }
    }
    if (best != i) continue;
    const double ratio =
        d2 > 0.0 ? d1 / d2 : (d1 <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
    if (ratio < ratio_threshold) out.push_back(entries[i].kp);
  }
  return out;
}

KeypointSet content_filter(const KeypointSet& cands, const DescriptorField& D,
                           const DescriptorField& Dp, const Homography& H,
                           double ratio_threshold) {
  return content_filter_t(cands, from_field(D), from_field(Dp), H, ratio_threshold);
}

KeypointSet dedup_union(const KeypointSet& y0, const KeypointSet& additions, int radius) {
  KeypointSet out = y0;
  for (const auto& kp : additions) {
    bool ok = true;
    for (const auto& q : out) {
      if (std::max(std::abs(q.x - kp.x), std::abs(q.y - kp.y)) <= radius) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(kp);
  }
  return out;
}

void expand_from_maps(const Grid& P, const Tensor& D, const Grid& Pp, const Tensor& Dp,
                      const Homography& H, ImageLabels& labels, const PkeConfig& cfg) {
  const KeypointSet cands = nms(P, cfg.nms_window, cfg.nms_threshold);
  const Grid pwarp = warp_grid(Pp, invert(H), P.h, P.w, Interp::Bilinear);
  const KeypointSet geo = geometric_filter(cands, pwarp, cfg.prob_threshold);
  labels.st = geo.empty() ? KeypointSet{} : content_filter_t(geo, D, Dp, H, cfg.ratio_threshold);
  labels.yt = dedup_union(labels.y0, labels.st, cfg.dedup_radius);
}

void expand_labels(const Model& m, const ImageGrid& img, LabelStore& store, int image_index,
                   const Homography& H, const PkeConfig& cfg, int epoch) {
  if (image_index < 0 || image_index >= int(store.images.size()))
    throw ConfigError("expand_labels: image index out of range");
  store.t = epoch;
  ImageLabels& L = store.images[image_index];
  if (epoch < cfg.warmup_epochs) {
    L.st.clear();
    L.yt = L.y0;
    return;
  }
  ImageGrid warped(img.h, img.w);
  static_cast<Grid&>(warped) = warp_grid(img, H, img.h, img.w, Interp::Bilinear);
  warped.native_w = img.native_w;
  warped.native_h = img.native_h;

  Workspace wsA, wsB;
  m.forward_t(from_grid(img), wsA);
  m.forward_t(from_grid(warped), wsB);
  expand_from_maps(to_grid(wsA.P), wsA.D, to_grid(wsB.P), wsB.D, H, L, cfg);
}

}  // namespace retina
