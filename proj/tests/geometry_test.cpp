#include "retinamatch/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace retina;

namespace {

Homography rotation_about(double deg, double cx, double cy) {
  const double a = deg * M_PI / 180.0;
  Eigen::Matrix3d m;
  m << std::cos(a), -std::sin(a), cx - std::cos(a) * cx + std::sin(a) * cy,
      std::sin(a), std::cos(a), cy - std::sin(a) * cx - std::cos(a) * cy,
      0, 0, 1;
  return Homography::from_matrix(m);
}

Grid gaussian_bump_grid(int h, int w, double cx, double cy, double sigma) {
  Grid g(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      g.at(y, x) = float(std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)));
    }
  return g;
}

}  // namespace

TEST(Homography, NormalizesBottomRight) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity() * 4.0;
  m(2, 2) = 2.0;
  const Homography H = Homography::from_matrix(m);
  EXPECT_DOUBLE_EQ(H.m(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(H.m(0, 0), 2.0);
}

TEST(Homography, RejectsSingular) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  m(2, 2) = 1.0;
  EXPECT_THROW(Homography::from_matrix(m), GeometryError);
}

TEST(Homography, TranslationMapsPoint) {
  const Homography H = Homography::translation(3, 4);
  const Eigen::Vector2d p = H.apply(10, 10);
  EXPECT_DOUBLE_EQ(p.x(), 13.0);
  EXPECT_DOUBLE_EQ(p.y(), 14.0);
}

TEST(Homography, IdentityKeepsPoints) {
  const Homography H = Homography::identity();
  KeypointSet pts = {{3, 7, 0.f}, {100, 41, 0.f}};
  const auto out = transform_points(pts, H);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].x(), 3.0);
  EXPECT_DOUBLE_EQ(out[0].y(), 7.0);
  EXPECT_DOUBLE_EQ(out[1].x(), 100.0);
  EXPECT_DOUBLE_EQ(out[1].y(), 41.0);
}

TEST(Homography, PerspectiveMatchesHomogeneousOracle) {
  Eigen::Matrix3d m;
  m << 1.1, 0.05, 3.0, -0.04, 0.97, -2.0, 1e-4, -2e-4, 1.0;
  const Homography H = Homography::from_matrix(m);
  const double xs[] = {0.0, 17.5, 311.0};
  const double ys[] = {5.0, 60.25, 299.0};
  for (double x : xs)
    for (double y : ys) {
      const Eigen::Vector3d v = m * Eigen::Vector3d(x, y, 1.0);
      const Eigen::Vector2d p = H.apply(x, y);
      EXPECT_NEAR(p.x(), v.x() / v.z(), 1e-9);
      EXPECT_NEAR(p.y(), v.y() / v.z(), 1e-9);
    }
}

TEST(Homography, ApplyThrowsAtInfinity) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = -0.01;  // w' = 1 - 0.01 x -> zero at x = 100
  const Homography H = Homography::from_matrix(m);
  EXPECT_THROW(H.apply(100.0, 0.0), GeometryError);
}

TEST(Invert, IdentityAndTranslation) {
  EXPECT_TRUE(invert(Homography::identity()).m.isApprox(Eigen::Matrix3d::Identity(), 1e-14));
  const Homography Hi = invert(Homography::translation(3, 4));
  EXPECT_NEAR(Hi.m(0, 2), -3.0, 1e-12);
  EXPECT_NEAR(Hi.m(1, 2), -4.0, 1e-12);
}

TEST(Invert, RoundTripElementwise) {
  Eigen::Matrix3d m;
  m << 0.93, -0.21, 14.0, 0.2, 1.07, -8.5, 3e-5, -1e-4, 1.0;
  const Homography H = Homography::from_matrix(m);
  const Eigen::Matrix3d prod = invert(H).m * H.m;
  const Eigen::Matrix3d I = prod / prod(2, 2);
  EXPECT_LT((I - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Invert, PointRoundTripOnGrid) {
  Eigen::Matrix3d m;
  m << 1.05, 0.1, -7.0, -0.08, 0.95, 12.0, 1e-4, 5e-5, 1.0;
  const Homography H = Homography::from_matrix(m);
  const Homography Hi = invert(H);
  double worst = 0.0;
  for (int gy = 0; gy < 10; ++gy)
    for (int gx = 0; gx < 10; ++gx) {
      const double x = gx * 85.0, y = gy * 85.0;
      const Eigen::Vector2d q = Hi.apply(H.apply(x, y).x(), H.apply(x, y).y());
      worst = std::max(worst, std::hypot(q.x() - x, q.y() - y));
    }
  EXPECT_LE(worst, 1e-8);
}

TEST(Invert, NearSingularThrows) {
  Eigen::Matrix3d m;
  m << 1, 2, 3, 2, 4, 6.0000000001, 0, 0, 1;  // rows nearly dependent
  EXPECT_THROW(invert(Homography::from_matrix(m)), GeometryError);
}

TEST(Serialize, RoundTripsExactly) {
  Eigen::Matrix3d m;
  m << 0.987654321098765, -0.2, 31.25, 0.2, 1.01, -4.75, 1.25e-4, -3.5e-5, 1.0;
  const Homography H = Homography::from_matrix(m);
  const Homography R = Homography::deserialize(H.serialize());
  EXPECT_LT((R.m - H.m).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Serialize, MalformedTextThrows) {
  EXPECT_THROW(Homography::deserialize("1 2 3"), IoError);
  EXPECT_THROW(Homography::deserialize("a b c d e f g h i"), IoError);
}

TEST(Sampler, DegenerateRangesGiveIdentity) {
  HomographySamplerConfig cfg;
  cfg.rotation_deg = {0, 0};
  cfg.scale = {1, 1};
  cfg.translation_frac = 0;
  cfg.perspective_frac = 0;
  Rng rng(7);
  const Homography H = sample_homography(cfg, 100, 100, rng);
  EXPECT_LT((H.m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Sampler, NinetyDegreesAboutCanvasCenter) {
  HomographySamplerConfig cfg;
  cfg.rotation_deg = {90, 90};
  cfg.scale = {1, 1};
  cfg.translation_frac = 0;
  cfg.perspective_frac = 0;
  Rng rng(3);
  const Homography H = sample_homography(cfg, 100, 100, rng);
  const Eigen::Vector2d p = H.apply(0, 0);
  EXPECT_NEAR(p.x(), 99.0, 1e-9);
  EXPECT_NEAR(p.y(), 0.0, 1e-9);
}

TEST(Sampler, SameSeedSameMatrix) {
  HomographySamplerConfig cfg;
  Rng a(42), b(42);
  const Homography Ha = sample_homography(cfg, 256, 256, a);
  const Homography Hb = sample_homography(cfg, 256, 256, b);
  EXPECT_EQ(Ha.m, Hb.m);  // bitwise
}

TEST(Sampler, UnsatisfiableOverlapThrows) {
  HomographySamplerConfig cfg;
  cfg.translation_frac = 3.0;  // pushes the canvas far away
  cfg.min_overlap = 0.99;
  Rng rng(0);
  // Nearly every draw shoves the frame out; expect the retry cap to trip.
  EXPECT_THROW(
      {
        for (int i = 0; i < 50; ++i) sample_homography(cfg, 64, 64, rng);
      },
      GeometryError);
}

TEST(Sampler, RespectsMinOverlap) {
  HomographySamplerConfig cfg;
  cfg.min_overlap = 0.8;
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Homography H = sample_homography(cfg, 128, 128, rng);
    EXPECT_GE(warped_overlap_fraction(H, 128, 128), 0.8);
  }
}

TEST(WarpGrid, IdentityIsExact) {
  Grid g = gaussian_bump_grid(32, 40, 20.0, 15.0, 6.0);
  const Grid out = warp_grid(g, Homography::identity(), 32, 40);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) EXPECT_FLOAT_EQ(out.at(y, x), g.at(y, x));
}

TEST(WarpGrid, IntegerTranslationShiftsColumns) {
  Grid g(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) g.at(y, x) = float(y * 16 + x + 1);
  const Grid out = warp_grid(g, Homography::translation(5, 0), 16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 5; ++x) EXPECT_EQ(out.at(y, x), 0.f) << "vacated band must be zero";
    for (int x = 5; x < 16; ++x) EXPECT_FLOAT_EQ(out.at(y, x), g.at(y, x - 5));
  }
}

TEST(WarpGrid, RoundTripInteriorMae) {
  Grid g = gaussian_bump_grid(64, 64, 31.5, 31.5, 10.0);
  const Homography H = rotation_about(10.0, 31.5, 31.5);
  const Grid once = warp_grid(g, H, 64, 64);
  const Grid back = warp_grid(once, invert(H), 64, 64);
  double mae = 0.0;
  int count = 0;
  for (int y = 16; y < 48; ++y)
    for (int x = 16; x < 48; ++x) {
      mae += std::abs(back.at(y, x) - g.at(y, x));
      ++count;
    }
  EXPECT_LE(mae / count, 0.05);
}

TEST(WarpGrid, PreservesValueRange) {
  Grid g = gaussian_bump_grid(48, 48, 10.0, 30.0, 5.0);
  Eigen::Matrix3d m;
  m << 0.9, 0.1, 4.0, -0.1, 1.1, -2.0, 1e-4, 0, 1.0;
  const Grid out = warp_grid(g, Homography::from_matrix(m), 48, 48);
  float lo = 1e9f, hi = -1e9f;
  for (float v : out.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_GE(lo, 0.f);
  EXPECT_LE(hi, 1.f + 1e-6f);
}

TEST(WarpGrid, NearestInterpolationKeepsBinaryValues) {
  Grid g(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) g.at(y, x) = (x + y) % 2 ? 1.f : 0.f;
  const Grid out = warp_grid(g, rotation_about(7.0, 9.5, 9.5), 20, 20, Interp::Nearest);
  for (float v : out.v) EXPECT_TRUE(v == 0.f || v == 1.f);
}

TEST(WarpGridAdjoint, MatchesForwardInnerProduct) {
  // <u, W v> == <W^T u, v> for the linear map v -> warp_grid(v, H).
  const int h = 24, w = 24;
  Rng rng(5);
  Grid v(h, w), u(h, w);
  for (auto& x : v.v) x = float(rng.uniform());
  for (auto& x : u.v) x = float(rng.uniform());
  const Homography H = rotation_about(12.0, 11.5, 11.5);
  const Grid Wv = warp_grid(v, H, h, w);
  const Grid Wtu = warp_grid_adjoint(u, H, h, w);
  double lhs = 0.0, rhs = 0.0;
  for (int i = 0; i < h * w; ++i) {
    lhs += double(u.v[size_t(i)]) * Wv.v[size_t(i)];
    rhs += double(Wtu.v[size_t(i)]) * v.v[size_t(i)];
  }
  EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(lhs)));
}

TEST(Overlap, IdentityCoversEverything) {
  EXPECT_NEAR(warped_overlap_fraction(Homography::identity(), 100, 100), 1.0, 1e-9);
}

TEST(Overlap, HalfShiftCoversHalf) {
  // Shifting right by half the canvas leaves about half the frame covered.
  const Homography H = Homography::translation(49.5, 0);
  EXPECT_NEAR(warped_overlap_fraction(H, 100, 100), 0.5, 0.02);
}

TEST(FourPoints, ReconstructsKnownHomography) {
  Eigen::Matrix3d m;
  m << 1.2, -0.1, 5.0, 0.15, 0.9, -3.0, 2e-4, -1e-4, 1.0;
  const Homography H = Homography::from_matrix(m);
  const std::array<Eigen::Vector2d, 4> src = {Eigen::Vector2d{0, 0}, {99, 0}, {99, 99}, {0, 99}};
  std::array<Eigen::Vector2d, 4> dst;
  for (int i = 0; i < 4; ++i) dst[size_t(i)] = H.apply(src[size_t(i)].x(), src[size_t(i)].y());
  const Homography R = homography_from_four_points(src, dst);
  EXPECT_LT((R.m - H.m).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(FourPoints, CollinearThrows) {
  const std::array<Eigen::Vector2d, 4> src = {Eigen::Vector2d{0, 0}, {10, 10}, {20, 20}, {0, 99}};
  const std::array<Eigen::Vector2d, 4> dst = {Eigen::Vector2d{0, 0}, {10, 0}, {10, 10}, {0, 10}};
  EXPECT_THROW(homography_from_four_points(src, dst), GeometryError);
}

TEST(BilinearSample, InterpolatesAndZeroFills) {
  Grid g(4, 4);
  g.at(1, 1) = 1.f;
  g.at(1, 2) = 3.f;
  EXPECT_FLOAT_EQ(bilinear_sample(g, 1.5, 1.0), 2.0f);
  EXPECT_FLOAT_EQ(bilinear_sample(g, -1.0, 0.0), 0.0f);
  EXPECT_FLOAT_EQ(bilinear_sample(g, 10.0, 10.0), 0.0f);
}
