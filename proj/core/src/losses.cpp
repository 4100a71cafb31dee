#include "retinamatch/losses.hpp"

#include <algorithm>
#include <cmath>

#include "retinamatch/matching.hpp"

namespace retina {

SoftLabelMap soften_labels(const KeypointSet& Y, int h, int w, double sigma) {
  SoftLabelMap m(h, w);
  if (sigma <= 0) throw ConfigError("soften_labels: sigma must be positive");
  const int R = int(std::floor(3.0 * sigma));
  const double r2max = 9.0 * sigma * sigma;
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const auto& kp : Y) {
    if (!m.in_bounds(kp.x, kp.y))
      throw ShapeError("soften_labels: keypoint (" + std::to_string(kp.x) + "," +
                       std::to_string(kp.y) + ") out of bounds for " + std::to_string(h) + "x" +
                       std::to_string(w));
    const int y0 = std::max(0, kp.y - R), y1 = std::min(h - 1, kp.y + R);
    const int x0 = std::max(0, kp.x - R), x1 = std::min(w - 1, kp.x + R);
    for (int y = y0; y <= y1; ++y) {
      const double dy = y - kp.y;
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - kp.x;
        const double r2 = dx * dx + dy * dy;
        if (r2 > r2max) continue;
        const float val = float(std::exp(-r2 * inv));
        float& cell = m.at(y, x);
        if (val > cell) cell = val;
      }
    }
  }
  return m;
}

namespace {

struct DiceSums {
  double inter = 0.0;  // sum P*T
  double denom = 0.0;  // sum P^2 + sum T^2
};

DiceSums dice_sums(const Grid& P, const Grid& T) {
  if (!P.same_shape(T))
    throw ShapeError("dice_loss: shape mismatch " + std::to_string(P.h) + "x" +
                     std::to_string(P.w) + " vs " + std::to_string(T.h) + "x" +
                     std::to_string(T.w));
  DiceSums s;
  for (size_t i = 0; i < P.v.size(); ++i) {
    const double p = P.v[i], t = T.v[i];
    s.inter += p * t;
    s.denom += p * p + t * t;
  }
  return s;
}

}  // namespace

double dice_loss(const Grid& P, const Grid& T) {
  const DiceSums s = dice_sums(P, T);
  // Both maps identically zero counts as perfect agreement. Any other
  // denominator is left unpadded so exact hand values survive.
  if (s.denom == 0.0) return 0.0;
  return 1.0 - 2.0 * s.inter / s.denom;
}

double dice_loss_grad(const Grid& P, const Grid& T, Grid* dP, Grid* dT) {
  const DiceSums s = dice_sums(P, T);
  if (dP && !dP->same_shape(P)) *dP = Grid(P.h, P.w);
  if (dT && !dT->same_shape(T)) *dT = Grid(T.h, T.w);
  if (s.denom == 0.0) {
    if (dP) std::fill(dP->v.begin(), dP->v.end(), 0.f);
    if (dT) std::fill(dT->v.begin(), dT->v.end(), 0.f);
    return 0.0;
  }
  const double Q = s.denom;
  // L = 1 - 2S/Q with S = sum(P*T), Q = sum(P^2)+sum(T^2):
  // dL/dPi = (-2*Ti*Q + 4*S*Pi) / Q^2, and symmetrically for T.
  const double invQ2 = 1.0 / (Q * Q);
  for (size_t i = 0; i < P.v.size(); ++i) {
    const double p = P.v[i], t = T.v[i];
    if (dP) dP->v[i] = float((4.0 * s.inter * p - 2.0 * t * Q) * invQ2);
    if (dT) dT->v[i] = float((4.0 * s.inter * t - 2.0 * p * Q) * invQ2);
  }
  return 1.0 - 2.0 * s.inter / Q;
}

DetectionLoss detection_loss(const Grid& P, const Grid& Yt, const Grid& Pwarp) {
  DetectionLoss out;
  out.clf = dice_loss(P, Yt);
  out.geo = dice_loss(P, Pwarp);
  out.det = out.clf + out.geo;
  return out;
}

DetectionLoss detection_loss_grad(const Grid& P, const Grid& Yt, const Grid& Pwarp, Grid* dP,
                                  Grid* dPwarp) {
  DetectionLoss out;
  Grid dP_clf, dP_geo;
  out.clf = dice_loss_grad(P, Yt, dP ? &dP_clf : nullptr, nullptr);
  out.geo = dice_loss_grad(P, Pwarp, dP ? &dP_geo : nullptr, dPwarp);
  out.det = out.clf + out.geo;
  if (dP) {
    *dP = dP_clf;
    for (size_t i = 0; i < dP->v.size(); ++i) dP->v[i] += dP_geo.v[i];
  }
  return out;
}

namespace {

// One keypoint usable by the triplet loss: its own descriptor plus the
// bilinear taps of its projected counterpart.
struct UsablePoint {
  Keypoint kp;
  int x0, y0;           // top-left tap in Dp
  float wx, wy;         // weight of the low tap along each axis
  std::vector<float> a;  // descriptor from D at (kp.y, kp.x)
  std::vector<float> b;  // interpolated descriptor from Dp
};

// d(||a-b||)/da = (a-b)/||a-b||, guarded at 0; `sign` lets callers flip for b.
void add_distance_grad(const std::vector<float>& a, const std::vector<float>& b, double dist,
                       double coeff, std::vector<double>& out) {
  if (dist < 1e-12) return;
  const double s = coeff / dist;
  for (size_t i = 0; i < a.size(); ++i) out[i] += s * (double(a[i]) - b[i]);
}

}  // namespace

DescriptionLoss description_loss_t(const Tensor& D, const Tensor& Dp, const KeypointSet& kps,
                                   const Homography& H, double margin, Rng& rng, Tensor* dD,
                                   Tensor* dDp) {
  if (!D.same_shape(Dp)) throw ShapeError("description_loss: descriptor shape mismatch");
  const int d = D.c, h = D.h, w = D.w;
  const size_t plane = size_t(h) * w;

  std::vector<UsablePoint> pts;
  pts.reserve(kps.size());
  for (const auto& kp : kps) {
    if (kp.x < 0 || kp.x >= w || kp.y < 0 || kp.y >= h)
      throw ShapeError("description_loss: keypoint out of bounds");
    const Eigen::Vector2d q = H.apply(kp.x, kp.y);
    if (q.x() < 0.0 || q.x() > w - 1 || q.y() < 0.0 || q.y() > h - 1) continue;
    UsablePoint u;
    u.kp = kp;
    u.x0 = int(std::floor(q.x()));
    u.y0 = int(std::floor(q.y()));
    if (u.x0 > w - 2) u.x0 = w - 2;
    if (u.y0 > h - 2) u.y0 = h - 2;
    if (u.x0 < 0) u.x0 = 0;
    if (u.y0 < 0) u.y0 = 0;
    u.wx = float(1.0 - (q.x() - u.x0));
    u.wy = float(1.0 - (q.y() - u.y0));
    u.a.resize(d);
    u.b.resize(d);
    const size_t base = size_t(u.kp.y) * w + u.kp.x;
    const size_t tap00 = size_t(u.y0) * w + u.x0;
    for (int ci = 0; ci < d; ++ci) {
      const float* pd = D.v.data() + size_t(ci) * plane;
      const float* pp = Dp.v.data() + size_t(ci) * plane;
      u.a[ci] = pd[base];
      const float top = pp[tap00] * u.wx + pp[tap00 + 1] * (1.f - u.wx);
      const float bot = pp[tap00 + w] * u.wx + pp[tap00 + w + 1] * (1.f - u.wx);
      u.b[ci] = top * u.wy + bot * (1.f - u.wy);
    }
    pts.push_back(std::move(u));
  }

  DescriptionLoss out;
  const int n = int(pts.size());
  if (n < 2) {
    out.degenerate = true;
    return out;
  }

  // Pairwise distances between this side's descriptors and the other side's
  // interpolated correspondents.
  std::vector<std::vector<float>> avecs(n), bvecs(n);
  for (int i = 0; i < n; ++i) {
    avecs[i] = pts[i].a;
    bvecs[i] = pts[i].b;
  }
  const std::vector<double> dist = pairwise_l2(avecs, bvecs);

  std::vector<std::vector<double>> ga, gb;
  if (dD || dDp) {
    ga.assign(n, std::vector<double>(d, 0.0));
    gb.assign(n, std::vector<double>(d, 0.0));
  }

  for (int i = 0; i < n; ++i) {
    // One uniform draw per usable keypoint, consumed even if the hinge ends
    // up inactive, so replays stay aligned.
    const uint64_t r = rng.uniform_int(uint64_t(n - 1));
    const int rand_j = int(r) < i ? int(r) : int(r) + 1;
    int hard_j = -1;
    double hard = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      if (dist[size_t(i) * n + j] < hard) {
        hard = dist[size_t(i) * n + j];
        hard_j = j;
      }
    }
    TripletTerm t;
    t.index = i;
    t.kp = pts[i].kp;
    t.phi = dist[size_t(i) * n + i];
    t.phi_rand = dist[size_t(i) * n + rand_j];
    t.phi_hard = hard;
    t.term = triplet_term(t.phi, t.phi_rand, t.phi_hard, margin);
    const double arg = margin + t.phi - 0.5 * (t.phi_rand + t.phi_hard);
    out.value += t.term;
    out.terms.push_back(t);

    if ((dD || dDp) && arg > 0.0) {
      // d(term)/d(phi) = 1, d(term)/d(phi_rand) = d(term)/d(phi_hard) = -1/2.
      add_distance_grad(pts[i].a, pts[i].b, t.phi, 1.0, ga[i]);
      add_distance_grad(pts[i].b, pts[i].a, t.phi, 1.0, gb[i]);
      add_distance_grad(pts[i].a, pts[rand_j].b, t.phi_rand, -0.5, ga[i]);
      add_distance_grad(pts[rand_j].b, pts[i].a, t.phi_rand, -0.5, gb[rand_j]);
      add_distance_grad(pts[i].a, pts[hard_j].b, t.phi_hard, -0.5, ga[i]);
      add_distance_grad(pts[hard_j].b, pts[i].a, t.phi_hard, -0.5, gb[hard_j]);
    }
  }

  if (dD) {
    for (int i = 0; i < n; ++i) {
      const size_t base = size_t(pts[i].kp.y) * w + pts[i].kp.x;
      for (int ci = 0; ci < d; ++ci) dD->v[size_t(ci) * plane + base] += float(ga[i][ci]);
    }
  }
  if (dDp) {
    for (int i = 0; i < n; ++i) {
      const auto& u = pts[i];
      const size_t tap00 = size_t(u.y0) * w + u.x0;
      for (int ci = 0; ci < d; ++ci) {
        const double g = gb[i][ci];
        float* pp = dDp->v.data() + size_t(ci) * plane;
        pp[tap00] += float(g * u.wy * u.wx);
        pp[tap00 + 1] += float(g * u.wy * (1.0 - u.wx));
        pp[tap00 + w] += float(g * (1.0 - u.wy) * u.wx);
        pp[tap00 + w + 1] += float(g * (1.0 - u.wy) * (1.0 - u.wx));
      }
    }
  }
  return out;
}

DescriptionLoss description_loss(const DescriptorField& D, const DescriptorField& Dp,
                                 const KeypointSet& kps, const Homography& H, double margin,
                                 Rng& rng) {
  return description_loss_t(from_field(D), from_field(Dp), kps, H, margin, rng);
}

double triplet_term(double phi, double phi_rand, double phi_hard, double margin) {
  const double arg = margin + phi - 0.5 * (phi_rand + phi_hard);
  return arg > 0.0 ? arg : 0.0;
}

double total_loss(const LossBreakdown& parts) { return parts.det + parts.des; }

}  // namespace retina
