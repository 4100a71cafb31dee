#include "retinamatch/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace retina {

namespace {

constexpr double kSingularTol = 1e-12;

Eigen::Matrix3d normalized(const Eigen::Matrix3d& raw) {
  if (std::abs(raw(2, 2)) < kSingularTol) {
    throw GeometryError("homography: cannot normalize, m(2,2) ~ 0");
  }
  return raw / raw(2, 2);
}

}  // namespace

Homography Homography::from_matrix(const Eigen::Matrix3d& raw) {
  if (std::abs(raw.determinant()) < kSingularTol) {
    throw GeometryError("homography: singular matrix");
  }
  Homography H;
  H.m = normalized(raw);
  return H;
}

Homography Homography::translation(double tx, double ty) {
  Homography H;
  H.m(0, 2) = tx;
  H.m(1, 2) = ty;
  return H;
}

Eigen::Vector2d Homography::apply(double x, double y) const {
  const double wp = m(2, 0) * x + m(2, 1) * y + m(2, 2);
  if (std::abs(wp) < kSingularTol) {
    throw GeometryError("homography: point maps to infinity");
  }
  return {(m(0, 0) * x + m(0, 1) * y + m(0, 2)) / wp,
          (m(1, 0) * x + m(1, 1) * y + m(1, 2)) / wp};
}

Homography Homography::compose(const Homography& rhs) const {
  return Homography::from_matrix(m * rhs.m);
}

std::string Homography::serialize() const {
  char buf[64];
  std::string out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
      if (!out.empty()) out += ' ';
      out += buf;
    }
  }
  return out;
}

Homography Homography::deserialize(const std::string& text) {
  std::istringstream is(text);
  Eigen::Matrix3d raw;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(is >> raw(r, c))) throw IoError("homography: expected 9 numbers");
  return Homography::from_matrix(raw);
}

Homography invert(const Homography& H) {
  if (std::abs(H.m.determinant()) < kSingularTol) {
    throw GeometryError("homography: near-singular, cannot invert");
  }
  return Homography::from_matrix(H.m.inverse().eval());
}

std::vector<Eigen::Vector2d> transform_points(const KeypointSet& pts, const Homography& H) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(H.apply(p.x, p.y));
  return out;
}

std::vector<Eigen::Vector2d> transform_points(const std::vector<Eigen::Vector2d>& pts,
                                              const Homography& H) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(H.apply(p.x(), p.y()));
  return out;
}

float bilinear_sample(const Grid& g, double x, double y) {
  if (x < -1.0 || y < -1.0 || x > g.w || y > g.h) return 0.f;
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy) {
    const int yy = y0 + dy;
    if (yy < 0 || yy >= g.h) continue;
    const double wy = dy ? fy : 1.0 - fy;
    for (int dx = 0; dx <= 1; ++dx) {
      const int xx = x0 + dx;
      if (xx < 0 || xx >= g.w) continue;
      const double wx = dx ? fx : 1.0 - fx;
      acc += wy * wx * g.at(yy, xx);
    }
  }
  return float(acc);
}

Grid warp_grid(const Grid& g, const Homography& H, int out_h, int out_w, Interp interp) {
  const Homography Hinv = invert(H);
  Grid out(out_h, out_w, 0.f);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double wp = Hinv.m(2, 0) * x + Hinv.m(2, 1) * y + Hinv.m(2, 2);
      if (std::abs(wp) < 1e-12) continue;
      const double sx = (Hinv.m(0, 0) * x + Hinv.m(0, 1) * y + Hinv.m(0, 2)) / wp;
      const double sy = (Hinv.m(1, 0) * x + Hinv.m(1, 1) * y + Hinv.m(1, 2)) / wp;
      if (interp == Interp::Bilinear) {
        out.at(y, x) = bilinear_sample(g, sx, sy);
      } else {
        const int ix = int(std::lround(sx));
        const int iy = int(std::lround(sy));
        if (g.in_bounds(ix, iy)) out.at(y, x) = g.at(iy, ix);
      }
    }
  }
  return out;
}

Grid warp_grid_adjoint(const Grid& d_out, const Homography& H, int src_h, int src_w) {
  const Homography Hinv = invert(H);
  Grid d_src(src_h, src_w, 0.f);
  for (int y = 0; y < d_out.h; ++y) {
    for (int x = 0; x < d_out.w; ++x) {
      const float go = d_out.at(y, x);
      if (go == 0.f) continue;
      const double wp = Hinv.m(2, 0) * x + Hinv.m(2, 1) * y + Hinv.m(2, 2);
      if (std::abs(wp) < 1e-12) continue;
      const double sx = (Hinv.m(0, 0) * x + Hinv.m(0, 1) * y + Hinv.m(0, 2)) / wp;
      const double sy = (Hinv.m(1, 0) * x + Hinv.m(1, 1) * y + Hinv.m(1, 2)) / wp;
      if (sx < -1.0 || sy < -1.0 || sx > src_w || sy > src_h) continue;
      const int x0 = int(std::floor(sx));
      const int y0 = int(std::floor(sy));
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int dy = 0; dy <= 1; ++dy) {
        const int yy = y0 + dy;
        if (yy < 0 || yy >= src_h) continue;
        const double wy = dy ? fy : 1.0 - fy;
        for (int dx = 0; dx <= 1; ++dx) {
          const int xx = x0 + dx;
          if (xx < 0 || xx >= src_w) continue;
          const double wx = dx ? fx : 1.0 - fx;
          d_src.at(yy, xx) += float(go * wy * wx);
        }
      }
    }
  }
  return d_src;
}

namespace {

// Sutherland-Hodgman clip of a convex polygon against an axis-aligned rect.
std::vector<Eigen::Vector2d> clip_to_rect(std::vector<Eigen::Vector2d> poly, double x0,
                                          double y0, double x1, double y1) {
  struct Edge {
    int axis;     // 0: x, 1: y
    double v;
    bool keep_ge;  // keep points with coord >= v
  };
  const Edge edges[4] = {{0, x0, true}, {0, x1, false}, {1, y0, true}, {1, y1, false}};
  for (const auto& e : edges) {
    if (poly.empty()) break;
    std::vector<Eigen::Vector2d> next;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d& a = poly[i];
      const Eigen::Vector2d& b = poly[(i + 1) % n];
      const double ca = e.axis == 0 ? a.x() : a.y();
      const double cb = e.axis == 0 ? b.x() : b.y();
      const bool ina = e.keep_ge ? ca >= e.v : ca <= e.v;
      const bool inb = e.keep_ge ? cb >= e.v : cb <= e.v;
      if (ina) next.push_back(a);
      if (ina != inb) {
        const double t = (e.v - ca) / (cb - ca);
        next.push_back(a + t * (b - a));
      }
    }
    poly = std::move(next);
  }
  return poly;
}

double polygon_area(const std::vector<Eigen::Vector2d>& poly) {
  double s = 0.0;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % n];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return std::abs(s) * 0.5;
}

}  // namespace

double warped_overlap_fraction(const Homography& H, int h, int w) {
  // Pixel-center corners; area measured on the same frame.
  std::vector<Eigen::Vector2d> poly;
  const double X = w - 1.0, Y = h - 1.0;
  const Eigen::Vector2d corners[4] = {{0, 0}, {X, 0}, {X, Y}, {0, Y}};
  for (const auto& c : corners) poly.push_back(H.apply(c.x(), c.y()));
  poly = clip_to_rect(std::move(poly), 0, 0, X, Y);
  const double canvas = X * Y;
  if (canvas <= 0) return 0.0;
  return polygon_area(poly) / canvas;
}

Homography homography_from_four_points(const std::array<Eigen::Vector2d, 4>& src,
                                       const std::array<Eigen::Vector2d, 4>& dst) {
  Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
  Eigen::Matrix<double, 8, 1> b;
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].x(), y = src[i].y();
    const double u = dst[i].x(), v = dst[i].y();
    A.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    A.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * i) = u;
    b(2 * i + 1) = v;
  }
  Eigen::Matrix<double, 8, 1> sol = A.fullPivLu().solve(b);
  if (!(A * sol - b).isZero(1e-6)) {
    throw GeometryError("homography: degenerate four-point configuration");
  }
  Eigen::Matrix3d m;
  m << sol(0), sol(1), sol(2), sol(3), sol(4), sol(5), sol(6), sol(7), 1.0;
  return Homography::from_matrix(m);
}

Homography sample_homography(const HomographySamplerConfig& cfg, int h, int w, Rng& rng) {
  if (h < 16 || w < 16) throw GeometryError("sample_homography: canvas below 16x16");
  if (cfg.scale.lo <= 0 || cfg.scale.hi <= 0) {
    throw ConfigError("sample_homography: scale bounds must be positive");
  }
  if (cfg.min_overlap < 0.0 || cfg.min_overlap > 1.0) {
    throw ConfigError("sample_homography: min_overlap outside [0,1]");
  }
  const double cx = (w - 1) * 0.5;
  const double cy = (h - 1) * 0.5;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double ang = rng.uniform(cfg.rotation_deg.lo, cfg.rotation_deg.hi) * M_PI / 180.0;
    const double s = rng.uniform(cfg.scale.lo, cfg.scale.hi);
    const double tx = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * w;
    const double ty = rng.uniform(-cfg.translation_frac, cfg.translation_frac) * h;

    const double ca = std::cos(ang), sa = std::sin(ang);
    Eigen::Matrix3d rs;  // rotation+scale about the canvas center
    rs << s * ca, -s * sa, cx - s * (ca * cx - sa * cy),
          s * sa,  s * ca, cy - s * (sa * cx + ca * cy),
          0, 0, 1;
    Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
    t(0, 2) = tx;
    t(1, 2) = ty;

    const double X = w - 1.0, Y = h - 1.0;
    std::array<Eigen::Vector2d, 4> corners = {
        Eigen::Vector2d{0, 0}, {X, 0}, {X, Y}, {0, Y}};
    std::array<Eigen::Vector2d, 4> jittered;
    for (int i = 0; i < 4; ++i) {
      jittered[i] = corners[i] + Eigen::Vector2d(
                                     rng.uniform(-cfg.perspective_frac, cfg.perspective_frac) * w,
                                     rng.uniform(-cfg.perspective_frac, cfg.perspective_frac) * h);
    }

    Homography H;
    try {
      const Homography persp = homography_from_four_points(corners, jittered);
      H = Homography::from_matrix(t * rs * persp.m);
    } catch (const GeometryError&) {
      continue;
    }
    if (warped_overlap_fraction(H, h, w) >= cfg.min_overlap) return H;
  }
  throw GeometryError("sample_homography: min_overlap unsatisfiable after 100 tries");
}

}  // namespace retina
