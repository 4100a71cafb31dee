#include "retinamatch/cache.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>

#include "retinamatch/checkpoint.hpp"

namespace retina {

namespace {

struct Fnv {
  uint64_t h = 1469598103934665603ull;
  void add(const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
  template <typename T>
  void add_pod(const T& v) {
    add(&v, sizeof v);
  }
};

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string cache_key(const ImageGrid& img, const Model& m, const MatchConfig& cfg) {
  Fnv f;
  f.add_pod(img.h);
  f.add_pod(img.w);
  f.add_pod(img.native_h);
  f.add_pod(img.native_w);
  if (!img.v.empty()) f.add(img.v.data(), img.v.size() * sizeof(float));
  const uint64_t pc = const_cast<Model&>(m).param_checksum();
  f.add_pod(pc);
  f.add_pod(m.config().descriptor_dim);
  f.add_pod(m.config().base_channels);
  f.add_pod(cfg.nms_window);
  f.add_pod(cfg.nms_threshold);
  return hex16(f.h);
}

FeatureCache FeatureCache::from_env() {
  const char* dir = std::getenv("RETINA_MATCH_CACHE");
  return dir && *dir ? FeatureCache(dir) : FeatureCache();
}

std::optional<Features> FeatureCache::load(const std::string& key) const {
  if (!enabled()) return std::nullopt;
  const std::string path = dir_ + "/" + key + ".feat";
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    const Container c = read_container(path);
    const TensorBlob& kt = c.require("kps");
    const TensorBlob& dt = c.require("desc");
    if (kt.dims.size() != 2 || kt.dims[1] != 3 || dt.dims.size() != 2 ||
        dt.dims[0] != kt.dims[0])
      return std::nullopt;
    const size_t n = kt.dims[0];
    const size_t d = dt.dims[1];
    std::vector<float> kraw(n * 3);
    kt.to_floats(kraw.data(), kraw.size());
    std::vector<float> draw(n * d);
    dt.to_floats(draw.data(), draw.size());
    Features f;
    f.kps.resize(n);
    f.descriptors.resize(n);
    for (size_t i = 0; i < n; ++i) {
      f.kps[i] = Keypoint{int(kraw[i * 3 + 0]), int(kraw[i * 3 + 1]), kraw[i * 3 + 2]};
      f.descriptors[i].assign(draw.begin() + long(i * d), draw.begin() + long((i + 1) * d));
    }
    return f;
  } catch (const CheckpointError&) {
    return std::nullopt;  // stale/corrupt entry counts as a miss
  }
}

void FeatureCache::store(const std::string& key, const Features& f) const {
  if (!enabled()) return;
  std::filesystem::create_directories(dir_);
  const uint32_t n = uint32_t(f.kps.size());
  const uint32_t d = n > 0 ? uint32_t(f.descriptors[0].size()) : 0;
  std::vector<float> kraw(size_t(n) * 3);
  std::vector<float> draw(size_t(n) * d);
  for (uint32_t i = 0; i < n; ++i) {
    kraw[size_t(i) * 3 + 0] = float(f.kps[i].x);
    kraw[size_t(i) * 3 + 1] = float(f.kps[i].y);
    kraw[size_t(i) * 3 + 2] = f.kps[i].score;
    if (f.descriptors[i].size() != d)
      throw ShapeError("cache: ragged descriptor list");
    std::copy(f.descriptors[i].begin(), f.descriptors[i].end(), draw.begin() + size_t(i) * d);
  }
  Container c;
  c.version = kCheckpointVersion;
  c.tensors.push_back(TensorBlob::from_floats("kps", {n, 3}, kraw.data(), kraw.size()));
  c.tensors.push_back(TensorBlob::from_floats("desc", {n, d}, draw.data(), draw.size()));
  const std::string path = dir_ + "/" + key + ".feat";
  const std::string tmp = path + ".tmp";
  write_container(tmp, c);
  std::filesystem::rename(tmp, path);
}

Features FeatureCache::get_or_extract(const ImageGrid& img, const Model& m,
                                      const MatchConfig& cfg) const {
  if (!enabled()) return extract_features(img, m, cfg);
  const std::string key = cache_key(img, m, cfg);
  if (auto hit = load(key)) return *std::move(hit);
  Features f = extract_features(img, m, cfg);
  store(key, f);
  return f;
}

}  // namespace retina
