#pragma once

// Match overlays: a side-by-side composite of the query/reference pair with
// matched keypoints drawn as dots, green where the inlier mask marks the
// match geometrically valid and red elsewhere.

#include <string>
#include <vector>

#include "retinamatch/matching.hpp"
#include "retinamatch/types.hpp"

namespace retina {

struct OverlayOptions {
  bool draw_lines = false;  // connect matched dots across the composite
  int dot_radius = 3;
};

/// Writes a PNG/JPEG composite (format from the extension). An empty inlier
/// mask draws every match red; otherwise the mask must align with `matches`.
/// Throws IoError when the file cannot be written.
void render_overlay(const Grid& query, const Grid& reference, const KeypointSet& kq,
                    const KeypointSet& kr, const std::vector<Match>& matches,
                    const std::vector<uint8_t>& inlier_mask, const std::string& out_path,
                    const OverlayOptions& opts = {});

/// Counts used by the overlay for a given mask, exposed for testing.
struct OverlayCounts {
  int green = 0;
  int red = 0;
};
OverlayCounts overlay_counts(const std::vector<Match>& matches,
                             const std::vector<uint8_t>& inlier_mask);

}  // namespace retina
