#include "retinamatch/matching.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "retinamatch/rng.hpp"

namespace retina {

KeypointSet nms(const DetectionMap& P, int window, double prob_threshold) {
  if (window < 1) throw ConfigError("nms: window must be >= 1");
  const int r = window / 2;
  KeypointSet out;
  for (int y = 0; y < P.h; ++y) {
    for (int x = 0; x < P.w; ++x) {
      const float v = P.at(y, x);
      if (!(v > prob_threshold)) continue;
      bool keep = true;
      const int y0 = std::max(0, y - r), y1 = std::min(P.h - 1, y + r);
      const int x0 = std::max(0, x - r), x1 = std::min(P.w - 1, x + r);
      for (int yy = y0; yy <= y1 && keep; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          const float u = P.at(yy, xx);
          // A strictly larger neighbor, or an equal one earlier in (y, x)
          // order, suppresses this pixel.
          if (u > v || (u == v && (yy < y || (yy == y && xx < x)))) {
            keep = false;
            break;
          }
        }
      }
      if (keep) out.push_back({x, y, v});
    }
  }
  std::sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  return out;
}

std::vector<std::vector<float>> sample_descriptors(const DescriptorField& D,
                                                   const KeypointSet& kps) {
  std::vector<std::vector<float>> out;
  out.reserve(kps.size());
  for (const auto& kp : kps) {
    if (kp.x < 0 || kp.x >= D.w || kp.y < 0 || kp.y >= D.h)
      throw ShapeError("sample_descriptors: keypoint (" + std::to_string(kp.x) + "," +
                       std::to_string(kp.y) + ") out of bounds");
    const float* p = D.at(kp.y, kp.x);
    out.emplace_back(p, p + D.d);
  }
  return out;
}

std::vector<double> pairwise_l2(const std::vector<std::vector<float>>& A,
                                const std::vector<std::vector<float>>& B) {
  const int n = int(A.size()), m = int(B.size());
  std::vector<double> out(size_t(n) * m);
  if (n == 0 || m == 0) return out;
  const int d = int(A[0].size());
  Eigen::MatrixXd Am(n, d), Bm(m, d);
  for (int i = 0; i < n; ++i) {
    if (int(A[i].size()) != d) throw ShapeError("pairwise_l2: ragged descriptor list");
    for (int k = 0; k < d; ++k) Am(i, k) = A[i][k];
  }
  for (int j = 0; j < m; ++j) {
    if (int(B[j].size()) != d) throw ShapeError("pairwise_l2: ragged descriptor list");
    for (int k = 0; k < d; ++k) Bm(j, k) = B[j][k];
  }
  const Eigen::MatrixXd G = Am * Bm.transpose();
  const Eigen::VectorXd na = Am.rowwise().squaredNorm();
  const Eigen::VectorXd nb = Bm.rowwise().squaredNorm();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out[size_t(i) * m + j] = std::sqrt(std::max(0.0, na(i) + nb(j) - 2.0 * G(i, j)));
  return out;
}

namespace {

// Nearest neighbor of row i in the distance matrix (ties -> smallest index),
// plus the two smallest distances.
void nearest_two(const double* row, int m, int& best, double& d1, double& d2) {
  best = -1;
  d1 = d2 = std::numeric_limits<double>::infinity();
  for (int j = 0; j < m; ++j) {
    const double d = row[j];
    if (d < d1) {
      d2 = d1;
      d1 = d;
      best = j;
    } else if (d < d2) {
      d2 = d;
    }
  }
}

}  // namespace

MatchSet match_descriptors(const std::vector<std::vector<float>>& A,
                           const std::vector<std::vector<float>>& B, double ratio, bool mutual) {
  MatchSet out;
  if (A.empty() || B.empty()) return out;
  const int n = int(A.size()), m = int(B.size());
  const std::vector<double> dist = pairwise_l2(A, B);
  // Backward NN per B column, for the optional mutual check.
  std::vector<int> back;
  if (mutual) {
    back.assign(m, -1);
    for (int j = 0; j < m; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i) {
        if (dist[size_t(i) * m + j] < best) {
          best = dist[size_t(i) * m + j];
          back[j] = i;
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    int j;
    double d1, d2;
    nearest_two(dist.data() + size_t(i) * m, m, j, d1, d2);
    if (ratio < 1.0) {
      // d2 is infinite when B has a single entry: the test passes vacuously.
      const double rr =
          d2 > 0.0 ? d1 / d2 : (d1 <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity());
      if (!(rr < ratio)) continue;
    }
    if (mutual && back[j] != i) continue;
    out.matches.push_back({i, j, d1});
  }
  std::sort(out.matches.begin(), out.matches.end(), [](const Match& a, const Match& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.iq != b.iq) return a.iq < b.iq;
    return a.ir < b.ir;
  });
  return out;
}

namespace {

bool three_collinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const Eigen::Vector2d& c) {
  const double area2 = std::abs((b.x() - a.x()) * (c.y() - a.y()) -
                                (b.y() - a.y()) * (c.x() - a.x()));
  return area2 < 1e-6;
}

bool degenerate_quad(const std::array<Eigen::Vector2d, 4>& p) {
  static const int tri[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
  for (const auto& t : tri)
    if (three_collinear(p[t[0]], p[t[1]], p[t[2]])) return true;
  return false;
}

// Hartley-normalized DLT over >= 4 correspondences.
Homography dlt(const std::vector<Eigen::Vector2d>& src, const std::vector<Eigen::Vector2d>& dst) {
  const int n = int(src.size());
  auto normalizer = [](const std::vector<Eigen::Vector2d>& pts) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (const auto& p : pts) c += p;
    c /= double(pts.size());
    double mean_dist = 0.0;
    for (const auto& p : pts) mean_dist += (p - c).norm();
    mean_dist /= double(pts.size());
    const double s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d T;
    T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
    return T;
  };
  const Eigen::Matrix3d Ts = normalizer(src), Td = normalizer(dst);

  Eigen::MatrixXd A(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d s = Ts * src[i].homogeneous();
    const Eigen::Vector3d d = Td * dst[i].homogeneous();
    const double x = s.x(), y = s.y(), u = d.x(), v = d.y();
    A.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    A.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  return Homography::from_matrix(Td.inverse() * Hn * Ts);
}

double median_sq_residual(const Homography& H, const std::vector<Eigen::Vector2d>& src,
                          const std::vector<Eigen::Vector2d>& dst, std::vector<double>& scratch) {
  scratch.clear();
  for (size_t i = 0; i < src.size(); ++i) {
    const Eigen::Vector2d p = H.apply(src[i].x(), src[i].y());
    scratch.push_back((p - dst[i]).squaredNorm());
  }
  const size_t k = scratch.size() / 2;
  std::nth_element(scratch.begin(), scratch.begin() + k, scratch.end());
  return scratch[k];
}

// All 4-element index combinations of [0, n), lexicographic, capped.
std::vector<std::array<int, 4>> four_combinations(int n) {
  std::vector<std::array<int, 4>> out;
  for (int a = 0; a < n - 3; ++a)
    for (int b = a + 1; b < n - 2; ++b)
      for (int c = b + 1; c < n - 1; ++c)
        for (int d = c + 1; d < n; ++d) out.push_back({a, b, c, d});
  return out;
}

uint64_t count_combinations(int n) {
  if (n < 4) return 0;
  return uint64_t(n) * (n - 1) * (n - 2) * (n - 3) / 24;
}

}  // namespace

HomographyEstimate estimate_homography(const MatchSet& matches, const KeypointSet& kpA,
                                       const KeypointSet& kpB, EstimatorMethod method,
                                       uint64_t seed) {
  const int n = int(matches.size());
  if (n < 4)
    throw RegistrationFailure("estimate_homography: need >= 4 matches, got " + std::to_string(n));

  // Canonical ordering makes the estimate independent of caller match order.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Match& ma = matches.matches[a];
    const Match& mb = matches.matches[b];
    if (ma.distance != mb.distance) return ma.distance < mb.distance;
    if (ma.iq != mb.iq) return ma.iq < mb.iq;
    return ma.ir < mb.ir;
  });
  std::vector<Eigen::Vector2d> src(n), dst(n);
  for (int i = 0; i < n; ++i) {
    const Match& m = matches.matches[order[i]];
    src[i] = Eigen::Vector2d(kpA[m.iq].x, kpA[m.iq].y);
    dst[i] = Eigen::Vector2d(kpB[m.ir].x, kpB[m.ir].y);
  }

  constexpr int kMaxSamples = 500;
  std::vector<std::array<int, 4>> samples;
  if (count_combinations(n) <= kMaxSamples) {
    samples = four_combinations(n);
  } else {
    Rng rng(seed);
    samples.reserve(kMaxSamples);
    while (int(samples.size()) < kMaxSamples) {
      std::array<int, 4> s{};
      for (int k = 0; k < 4;) {
        const int cand = int(rng.uniform_int(uint64_t(n)));
        bool dup = false;
        for (int j = 0; j < k; ++j) dup |= s[j] == cand;
        if (!dup) s[k++] = cand;
      }
      std::sort(s.begin(), s.end());
      samples.push_back(s);
    }
  }

  const bool lmeds = method == EstimatorMethod::LeastMedianOfSquares;
  constexpr double kRansacThresh = 3.0;  // px

  bool have_best = false;
  Homography bestH;
  double best_med = std::numeric_limits<double>::infinity();
  int best_inliers = -1;
  double best_sse = std::numeric_limits<double>::infinity();
  std::vector<double> scratch;

  for (const auto& s : samples) {
    std::array<Eigen::Vector2d, 4> s4, d4;
    for (int k = 0; k < 4; ++k) {
      s4[size_t(k)] = src[s[size_t(k)]];
      d4[size_t(k)] = dst[s[size_t(k)]];
    }
    if (degenerate_quad(s4) || degenerate_quad(d4)) continue;
    Homography H;
    try {
      H = homography_from_four_points(s4, d4);
    } catch (const GeometryError&) {
      continue;
    }
    if (lmeds) {
      const double med = median_sq_residual(H, src, dst, scratch);
      if (med < best_med) {
        best_med = med;
        bestH = H;
        have_best = true;
      }
    } else {
      int inl = 0;
      double sse = 0.0;
      for (int i = 0; i < n; ++i) {
        const double r2 = (H.apply(src[i].x(), src[i].y()) - dst[i]).squaredNorm();
        if (r2 <= kRansacThresh * kRansacThresh) {
          ++inl;
          sse += r2;
        }
      }
      if (inl > best_inliers || (inl == best_inliers && sse < best_sse)) {
        best_inliers = inl;
        best_sse = sse;
        bestH = H;
        best_med = median_sq_residual(H, src, dst, scratch);
        have_best = true;
      }
    }
  }
  if (!have_best)
    throw RegistrationFailure("estimate_homography: every hypothesis sample was degenerate");

  // Robust scale from the winning median (Rousseeuw's finite-sample factor),
  // then the inlier band at 2.5 sigma.
  double thresh2;
  if (n == 4) {
    thresh2 = std::numeric_limits<double>::infinity();  // exact interpolation case
  } else {
    const double sigma = 1.4826 * (1.0 + 5.0 / double(n - 4)) * std::sqrt(best_med);
    thresh2 = std::max((2.5 * sigma) * (2.5 * sigma), 1e-12);
  }
  if (!lmeds) thresh2 = kRansacThresh * kRansacThresh;

  std::vector<uint8_t> mask_sorted(n, 0);
  std::vector<Eigen::Vector2d> in_src, in_dst;
  for (int i = 0; i < n; ++i) {
    const double r2 = (bestH.apply(src[i].x(), src[i].y()) - dst[i]).squaredNorm();
    if (r2 <= thresh2) {
      mask_sorted[i] = 1;
      in_src.push_back(src[i]);
      in_dst.push_back(dst[i]);
    }
  }

  HomographyEstimate out;
  out.H = bestH;
  out.median_residual = best_med;
  if (int(in_src.size()) > 4) {
    try {
      out.H = dlt(in_src, in_dst);
    } catch (const GeometryError&) {
      out.H = bestH;  // keep the hypothesis if the refit degenerates
    }
  }
  out.mask.assign(n, 0);
  for (int i = 0; i < n; ++i) out.mask[order[i]] = mask_sorted[i];
  out.inlier_count = int(in_src.size());
  return out;
}

namespace {

Homography to_native(const Homography& Hw, const ImageGrid& q, const ImageGrid& r) {
  Eigen::Matrix3d Sq = Eigen::Matrix3d::Identity(), Sr = Eigen::Matrix3d::Identity();
  Sq(0, 0) = q.scale_x();
  Sq(1, 1) = q.scale_y();
  Sr(0, 0) = r.scale_x();
  Sr(1, 1) = r.scale_y();
  return Homography::from_matrix(Sr * Hw.m * Sq.inverse());
}

}  // namespace

Features extract_features(const ImageGrid& img, const Model& m, const MatchConfig& cfg) {
  Features f;
  const ForwardResult fwd = m.forward(img);
  f.kps = nms(fwd.P, cfg.nms_window, cfg.nms_threshold);
  f.descriptors = sample_descriptors(fwd.D, f.kps);
  return f;
}

RegistrationResult register_features(const Features& fq, const Features& fr, const ImageGrid& q,
                                     const ImageGrid& r, const MatchConfig& cfg,
                                     RegistrationDetails* details) {
  RegistrationResult res;
  MatchSet ms;
  if (fq.kps.size() >= 4 && fr.kps.size() >= 4)
    ms = match_descriptors(fq.descriptors, fr.descriptors, cfg.ratio, cfg.mutual);
  res.match_count = int(ms.size());
  if (details) {
    details->kq = fq.kps;
    details->kr = fr.kps;
    details->H_working.reset();
  }
  if (ms.size() < 4) {
    if (details) details->matches = std::move(ms);
    return res;  // Failed
  }
  try {
    HomographyEstimate est = estimate_homography(ms, fq.kps, fr.kps, cfg.method, cfg.seed);
    ms.inliers = est.mask;
    res.status = RegStatus::Fitted;
    res.inlier_count = est.inlier_count;
    res.H = to_native(est.H, q, r);
    if (details) details->H_working = est.H;
  } catch (const RegistrationFailure&) {
    // status stays Failed
  }
  if (details) details->matches = std::move(ms);
  return res;
}

RegistrationResult register_pair(const ImageGrid& q, const ImageGrid& r, const Model& m,
                                 const MatchConfig& cfg, RegistrationDetails* details) {
  return register_features(extract_features(q, m, cfg), extract_features(r, m, cfg), q, r, cfg,
                           details);
}

VerificationResult verify_features(const Features& fq, const Features& fr, const ImageGrid& q,
                                   const ImageGrid& r, int accept_threshold,
                                   const MatchConfig& cfg, RegistrationDetails* details) {
  VerificationResult out;
  out.threshold = accept_threshold;
  RegistrationDetails local;
  RegistrationDetails* det = details ? details : &local;
  register_features(fq, fr, q, r, cfg, det);
  if (!det->H_working) return out;  // failed fit -> reject
  const Homography& H = *det->H_working;
  int surviving = 0;
  for (size_t k = 0; k < det->matches.size(); ++k) {
    const Match& match = det->matches.matches[k];
    const Keypoint& a = det->kq[match.iq];
    const Keypoint& b = det->kr[match.ir];
    const Eigen::Vector2d p = H.apply(a.x, a.y);
    const double err = std::hypot(p.x() - b.x, p.y() - b.y);
    if (err <= cfg.reproj_px) ++surviving;
  }
  out.surviving = surviving;
  out.accept = surviving >= accept_threshold;
  return out;
}

VerificationResult verify_pair(const ImageGrid& q, const ImageGrid& r, const Model& m,
                               int accept_threshold, const MatchConfig& cfg,
                               RegistrationDetails* details) {
  return verify_features(extract_features(q, m, cfg), extract_features(r, m, cfg), q, r,
                         accept_threshold, cfg, details);
}

}  // namespace retina
