#pragma once

// Image ingestion and preprocessing, keypoint label files, pair-list
// construction, control-point ground truth, and a synthetic vasculature
// generator for desk-scale runs.

#include <string>
#include <vector>

#include "retinamatch/metrics.hpp"
#include "retinamatch/types.hpp"

namespace retina {

enum class ChannelPolicy { Green, Luminance };

/// Loads PNG/JPEG (8- or 16-bit, 1 or 3 channels), reduces color by
/// `policy`, bilinearly resizes to target_size x target_size (0 keeps the
/// source size), scales to [0,1], and records the native dimensions.
ImageGrid load_image(const std::string& path, int target_size,
                     ChannelPolicy policy = ChannelPolicy::Green);

/// Writes a grid (clamped to [0,1]) as an 8-bit grayscale image.
void save_image(const std::string& path, const Grid& g);

/// Keypoint label file: JSON {"image_size":[w,h],
/// "images":[{"file":..., "keypoints":[[x,y],...]}, ...]}, native pixels.
struct LabelFile {
  int w = 0, h = 0;
  std::vector<std::pair<std::string, KeypointSet>> images;

  const KeypointSet* find(const std::string& file) const;
};

/// Parses + validates (bounds, duplicate files, malformed records -> IoError).
/// Per-image counts outside [1, 10000] produce entries in `warnings`.
LabelFile load_labels(const std::string& path, std::vector<std::string>* warnings = nullptr);
void save_labels(const std::string& path, const LabelFile& labels);

struct SynthConfig {
  int size = 256;
  int depth = 5;                       // bifurcation recursion depth
  Interval branch_angle_deg{25, 50};   // half-angle between children
  double vessel_width = 2.6;           // px at the root, shrinking per level
  double texture_amplitude = 0.06;     // background texture strength
  double vessel_contrast = 0.6;        // darkening factor on vessel pixels
  uint64_t seed = 0;
};

struct SynthImage {
  ImageGrid image;
  KeypointSet bifurcations;  // ground truth; pairwise Chebyshev distance > 6
};

/// Renders a random branching vessel tree, dark on a brighter textured disc,
/// anti-aliased; every branch point becomes a ground-truth keypoint.
/// Deterministic per cfg.seed.
SynthImage synth_vasculature(const SynthConfig& cfg);

struct Pair {
  std::string a, b;
  bool genuine = false;
  std::string control_path;  // registration ground truth, when present
};

using PairList = std::vector<Pair>;

/// (eye-id, image-id) records -> all genuine (within-eye) and impostor
/// (cross-eye) pairs. `impostor_target` > 0 subsamples impostors
/// deterministically with `seed`.
PairList build_verification_pairs(const std::vector<std::pair<std::string, std::string>>& images,
                                  int impostor_target = 0, uint64_t seed = 0);

/// Pair manifest CSV: idA,idB,label where label is "genuine", "impostor",
/// or a control-point CSV path (registration mode).
PairList load_pair_manifest(const std::string& path);
void save_pair_manifest(const std::string& path, const PairList& pairs);

/// Control points: one "xq,yq,xr,yr" line per correspondence.
std::vector<ControlPair> load_control_points(const std::string& path);
void save_control_points(const std::string& path, const std::vector<ControlPair>& pts);

}  // namespace retina
