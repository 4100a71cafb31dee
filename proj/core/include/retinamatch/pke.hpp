#pragma once

// Progressive keypoint expansion: once per epoch (after a warmup), detected
// keypoints that survive both a geometric consistency check against the
// warped counterpart's probability map and a descriptor double-matching
// check are added to the training label set.

#include "retinamatch/geometry.hpp"
#include "retinamatch/model.hpp"
#include "retinamatch/tensor.hpp"
#include "retinamatch/types.hpp"

namespace retina {

struct PkeConfig {
  double prob_threshold = 0.5;   // strict: value must exceed this
  double ratio_threshold = 0.8;  // Lowe ratio for the content filter
  int warmup_epochs = 5;
  int dedup_radius = 5;  // Chebyshev px
  int nms_window = 10;
  double nms_threshold = 0.5;
};

struct ImageLabels {
  KeypointSet y0;  // initial labels, never removed
  KeypointSet st;  // this epoch's accepted expansions
  KeypointSet yt;  // training labels: dedup(y0 union st)
};

struct LabelStore {
  std::vector<ImageLabels> images;
  int t = 0;  // epoch of the last expansion
  int dedup_radius = 5;

  /// Builds a store from initial label sets. Each Y0 is internally deduped
  /// (first point wins) so the separation invariant holds from the start.
  static LabelStore init(const std::vector<KeypointSet>& y0s, int dedup_radius = 5);

  size_t mean_y0() const;
  size_t total_yt() const;
};

/// Keeps the points whose value in `pwarp` strictly exceeds prob_threshold.
KeypointSet geometric_filter(const KeypointSet& cands, const Grid& pwarp, double prob_threshold);

/// Double matching: descriptor i (from D at the candidate pixel) must have
/// its own correspondent (bilinear sample of Dp at H(candidate)) as nearest
/// neighbor AND pass the ratio test. A single surviving candidate falls back
/// to an absolute distance test (< 0.1). Candidates projecting out of bounds
/// are dropped. Tensors are channel-major (d, h, w).
KeypointSet content_filter_t(const KeypointSet& cands, const Tensor& D, const Tensor& Dp,
                             const Homography& H, double ratio_threshold);
KeypointSet content_filter(const KeypointSet& cands, const DescriptorField& D,
                           const DescriptorField& Dp, const Homography& H,
                           double ratio_threshold);

/// y0 first, then the additions that stay strictly more than `radius`
/// (Chebyshev) from everything already kept.
KeypointSet dedup_union(const KeypointSet& y0, const KeypointSet& additions, int radius);

/// Core expansion from precomputed maps: candidates = NMS(P), geometric
/// filter against warp(Pp, H^-1), content filter on descriptors, then
/// yt = dedup(y0 union st). The trainer calls this with the forwards it
/// already ran.
void expand_from_maps(const Grid& P, const Tensor& D, const Grid& Pp, const Tensor& Dp,
                      const Homography& H, ImageLabels& labels, const PkeConfig& cfg);

/// Spec-level entry: runs the two forwards (img and warp(img, H)) itself.
/// epoch < warmup leaves yt = y0. Updates store.t.
void expand_labels(const Model& m, const ImageGrid& img, LabelStore& store, int image_index,
                   const Homography& H, const PkeConfig& cfg, int epoch);

}  // namespace retina
