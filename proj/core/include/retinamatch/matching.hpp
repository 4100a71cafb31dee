#pragma once

// Inference pipeline: non-maximum suppression over the detection map,
// descriptor sampling, brute-force matching with a ratio test, robust
// homography estimation (least-median-of-squares over 4-point DLT
// hypotheses), and the registration / verification entry points.

#include <optional>

#include "retinamatch/geometry.hpp"
#include "retinamatch/model.hpp"
#include "retinamatch/types.hpp"

namespace retina {

/// Raised when registration cannot proceed (fewer than 4 matches, or every
/// hypothesis sample was degenerate).
struct RegistrationFailure : Error {
  using Error::Error;
};

/// Strict local maxima of P over a window x window neighborhood, above
/// prob_threshold; ties suppressed in favor of the smallest (y, x). Output
/// sorted by score descending, then (y, x).
KeypointSet nms(const DetectionMap& P, int window = 10, double prob_threshold = 0.5);

/// Descriptor at each keypoint's integer pixel, no interpolation.
std::vector<std::vector<float>> sample_descriptors(const DescriptorField& D,
                                                   const KeypointSet& kps);

struct Match {
  int iq = 0;
  int ir = 0;
  double distance = 0.0;
};

struct MatchSet {
  std::vector<Match> matches;
  std::vector<uint8_t> inliers;  // filled by estimate_homography; same length

  size_t size() const { return matches.size(); }
};

/// Row-major |A| x |B| matrix of L2 distances, accumulated in double
/// (one GEMM instead of a scalar triple loop).
std::vector<double> pairwise_l2(const std::vector<std::vector<float>>& A,
                                const std::vector<std::vector<float>>& B);

/// One-directional nearest neighbor from A into B under L2, kept when
/// d1/d2 < ratio (ratio >= 1 disables the test); `mutual` additionally
/// requires the B->A nearest neighbor to agree. Sorted by distance, then
/// (iq, ir).
MatchSet match_descriptors(const std::vector<std::vector<float>>& A,
                           const std::vector<std::vector<float>>& B, double ratio = 0.9,
                           bool mutual = false);

enum class EstimatorMethod { LeastMedianOfSquares, Ransac };

struct HomographyEstimate {
  Homography H;               // maps A (query) coordinates to B (reference)
  std::vector<uint8_t> mask;  // aligned with the caller's match order
  int inlier_count = 0;
  double median_residual = 0.0;  // of the winning hypothesis, in px^2
};

/// Robust fit over the matched keypoint pairs. Deterministic: hypothesis
/// sampling is seeded internally and matches are canonically ordered first,
/// so the result does not depend on the order of `matches`.
/// Throws RegistrationFailure when matches.size() < 4 or when every sampled
/// hypothesis was degenerate.
HomographyEstimate estimate_homography(const MatchSet& matches, const KeypointSet& kpA,
                                       const KeypointSet& kpB,
                                       EstimatorMethod method = EstimatorMethod::LeastMedianOfSquares,
                                       uint64_t seed = 0x5eed);

struct MatchConfig {
  int nms_window = 10;
  double nms_threshold = 0.5;
  double ratio = 0.9;
  bool mutual = false;
  EstimatorMethod method = EstimatorMethod::LeastMedianOfSquares;
  double reproj_px = 5.0;  // outlier-removal tolerance for verification
  uint64_t seed = 0x5eed;
};

/// Keypoints + their sampled descriptors for one image (working resolution).
struct Features {
  KeypointSet kps;
  std::vector<std::vector<float>> descriptors;
};

/// Forward pass, NMS, descriptor sampling — the per-image half of
/// registration, split out so reference features can be cached.
Features extract_features(const ImageGrid& img, const Model& m, const MatchConfig& cfg);

enum class RegStatus { Failed, Fitted };

struct RegistrationResult {
  RegStatus status = RegStatus::Failed;
  Homography H;  // native-resolution coordinates; valid when Fitted
  int match_count = 0;
  int inlier_count = 0;
};

/// Working-resolution intermediates, for overlays and verification.
struct RegistrationDetails {
  KeypointSet kq, kr;
  MatchSet matches;
  std::optional<Homography> H_working;
};

RegistrationResult register_pair(const ImageGrid& q, const ImageGrid& r, const Model& m,
                                 const MatchConfig& cfg, RegistrationDetails* details = nullptr);

/// register_pair over precomputed features; q and r contribute only their
/// native-resolution metadata for the returned H.
RegistrationResult register_features(const Features& fq, const Features& fr, const ImageGrid& q,
                                     const ImageGrid& r, const MatchConfig& cfg,
                                     RegistrationDetails* details = nullptr);

struct VerificationResult {
  bool accept = false;
  int surviving = 0;
  int threshold = 0;
};

/// Fits H, drops matches whose reprojection error under H exceeds
/// cfg.reproj_px, and accepts when the survivors number >= accept_threshold.
/// A failed fit never throws; it yields accept = false with 0 survivors.
VerificationResult verify_pair(const ImageGrid& q, const ImageGrid& r, const Model& m,
                               int accept_threshold, const MatchConfig& cfg,
                               RegistrationDetails* details = nullptr);

VerificationResult verify_features(const Features& fq, const Features& fr, const ImageGrid& q,
                                   const ImageGrid& r, int accept_threshold,
                                   const MatchConfig& cfg,
                                   RegistrationDetails* details = nullptr);

}  // namespace retina
