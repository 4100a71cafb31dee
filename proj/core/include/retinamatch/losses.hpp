#pragma once

// Soft-label construction and the training losses: Dice-based detection
// terms and the hinge triplet description loss. Every loss has a value-only
// form plus a variant that also accumulates analytic gradients, so the
// trainer and the finite-difference tests share one implementation.

#include "retinamatch/geometry.hpp"
#include "retinamatch/rng.hpp"
#include "retinamatch/tensor.hpp"
#include "retinamatch/types.hpp"

namespace retina {

/// Gaussian bump (peak 1, truncated at 3*sigma) around every keypoint;
/// overlapping bumps combine by elementwise max. Throws ShapeError for an
/// out-of-bounds keypoint.
SoftLabelMap soften_labels(const KeypointSet& Y, int h, int w, double sigma = 2.0);

/// 1 - 2*sum(P.*T) / (sum(P.^2) + sum(T.^2)); defined as 0 when both maps
/// are identically zero. Throws ShapeError on shape mismatch.
double dice_loss(const Grid& P, const Grid& T);
/// Same value; additionally writes d(loss)/dP and/or d(loss)/dT.
double dice_loss_grad(const Grid& P, const Grid& T, Grid* dP, Grid* dT);

struct DetectionLoss {
  double clf = 0.0;
  double geo = 0.0;
  double det = 0.0;  // clf + geo
};

/// clf = dice(P, Yt); geo = dice(P, Pwarp) where Pwarp is the counterpart
/// probability map pulled back into this image's frame.
DetectionLoss detection_loss(const Grid& P, const Grid& Yt, const Grid& Pwarp);
DetectionLoss detection_loss_grad(const Grid& P, const Grid& Yt, const Grid& Pwarp, Grid* dP,
                                  Grid* dPwarp);

struct TripletTerm {
  int index = 0;  // position in the usable-keypoint list
  Keypoint kp;
  double phi = 0.0;       // positive distance
  double phi_rand = 0.0;  // one uniformly drawn other correspondent
  double phi_hard = 0.0;  // closest other correspondent
  double term = 0.0;      // hinge value
};

struct DescriptionLoss {
  double value = 0.0;
  bool degenerate = false;  // fewer than 2 usable keypoints
  std::vector<TripletTerm> terms;
};

/// One hinge term: max(0, margin + phi - (phi_rand + phi_hard) / 2).
double triplet_term(double phi, double phi_rand, double phi_hard, double margin);

/// Triplet loss over detected keypoints: descriptors are read from D at the
/// keypoints and from Dp by bilinear interpolation at their projections
/// under H; keypoints projecting out of bounds are skipped. Consumes one
/// uniform draw from `rng` per usable keypoint, in keypoint order.
/// Tensors are channel-major (d, h, w). Optional dD/dDp accumulate
/// gradients (they must be pre-sized to match).
DescriptionLoss description_loss_t(const Tensor& D, const Tensor& Dp, const KeypointSet& kps,
                                   const Homography& H, double margin, Rng& rng,
                                   Tensor* dD = nullptr, Tensor* dDp = nullptr);

/// Convenience wrapper over pixel-major descriptor fields.
DescriptionLoss description_loss(const DescriptorField& D, const DescriptorField& Dp,
                                 const KeypointSet& kps, const Homography& H, double margin,
                                 Rng& rng);

struct LossBreakdown {
  double clf = 0.0;
  double geo = 0.0;
  double det = 0.0;
  double des = 0.0;
  double total = 0.0;
};

/// total = det + des, unweighted.
double total_loss(const LossBreakdown& parts);

inline constexpr double kDefaultMargin = 1.0;
inline constexpr double kDefaultLabelSigma = 2.0;

}  // namespace retina
