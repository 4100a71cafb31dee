#pragma once

// On-disk cache of extracted keypoints/descriptors, so evaluation runs that
// revisit the same reference images skip the network forward. Entries are
// keyed by image content, model parameters and extraction settings; the
// directory comes from the RETINA_MATCH_CACHE environment variable (unset
// or empty disables caching).

#include <optional>
#include <string>

#include "retinamatch/matching.hpp"
#include "retinamatch/model.hpp"
#include "retinamatch/types.hpp"

namespace retina {

/// Hex digest over the image pixels + dimensions, the model parameter
/// checksum, and the NMS/descriptor settings that shape the features.
std::string cache_key(const ImageGrid& img, const Model& m, const MatchConfig& cfg);

class FeatureCache {
 public:
  FeatureCache() = default;  // disabled
  explicit FeatureCache(std::string dir) : dir_(std::move(dir)) {}
  static FeatureCache from_env();

  bool enabled() const { return !dir_.empty(); }
  const std::string& dir() const { return dir_; }

  /// Returns the entry, or nullopt on a miss. A corrupt or unreadable entry
  /// counts as a miss rather than an error.
  std::optional<Features> load(const std::string& key) const;
  /// Atomic write (temp file + rename); no-op when disabled.
  void store(const std::string& key, const Features& f) const;

  /// extract_features with a cache shortcut.
  Features get_or_extract(const ImageGrid& img, const Model& m, const MatchConfig& cfg) const;

 private:
  std::string dir_;
};

}  // namespace retina
