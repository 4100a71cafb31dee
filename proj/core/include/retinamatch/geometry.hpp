#pragma once

// Planar homographies: representation, random sampling for training, and
// warping of points and grids. The 3x3 matrix acts on column vectors
// (x, y, 1)^T and is stored normalized with m(2,2) = 1.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "retinamatch/rng.hpp"
#include "retinamatch/types.hpp"

namespace retina {

struct Homography {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();

  Homography() = default;
  /// Normalizes so m(2,2) = 1; rejects singular or badly scaled input.
  static Homography from_matrix(const Eigen::Matrix3d& raw);
  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);

  /// Maps a single point; throws GeometryError when the point is within
  /// 1e-12 of the line at infinity.
  Eigen::Vector2d apply(double x, double y) const;

  Homography compose(const Homography& rhs) const;  // this ∘ rhs

  /// Row-major, 17 significant digits, space separated.
  std::string serialize() const;
  static Homography deserialize(const std::string& text);
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct HomographySamplerConfig {
  Interval rotation_deg{-15.0, 15.0};
  Interval scale{0.85, 1.15};
  double translation_frac = 0.05;   // of image side, symmetric
  double perspective_frac = 0.05;   // corner jitter, fraction of side
  double min_overlap = 0.7;         // warped canvas coverage, in [0,1]
  uint64_t seed = 0;
};

/// Draws rotation * scale * translation * corner-jitter homographies until the
/// warped canvas keeps at least cfg.min_overlap of the frame (<= 100 tries).
Homography sample_homography(const HomographySamplerConfig& cfg, int h, int w, Rng& rng);

/// Exact inverse; throws GeometryError when |det| < 1e-12.
Homography invert(const Homography& H);

std::vector<Eigen::Vector2d> transform_points(const KeypointSet& pts, const Homography& H);
std::vector<Eigen::Vector2d> transform_points(const std::vector<Eigen::Vector2d>& pts,
                                              const Homography& H);

enum class Interp { Bilinear, Nearest };

/// Inverse-mapping warp: out(p) = g(H^-1 p), zero fill outside the source.
Grid warp_grid(const Grid& g, const Homography& H, int out_h, int out_w,
               Interp interp = Interp::Bilinear);

/// Adjoint of the bilinear warp: scatters d_out back onto the source grid.
/// Needed to backpropagate through warped probability maps.
Grid warp_grid_adjoint(const Grid& d_out, const Homography& H, int src_h, int src_w);

/// Bilinear sample with zero fill outside [0,w-1]x[0,h-1].
float bilinear_sample(const Grid& g, double x, double y);

/// Fraction of the h x w canvas covered by the warped canvas polygon.
double warped_overlap_fraction(const Homography& H, int h, int w);

/// Solves the exact homography mapping src[i] -> dst[i] for 4 point pairs.
Homography homography_from_four_points(const std::array<Eigen::Vector2d, 4>& src,
                                       const std::array<Eigen::Vector2d, 4>& dst);

}  // namespace retina
