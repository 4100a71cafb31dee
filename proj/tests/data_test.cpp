#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "retinamatch/data.hpp"

using namespace retina;

namespace {

std::string tmp_path(const std::string& name) {
  return ::testing::TempDir() + "retinamatch_data_" + name;
}

// Binary PPM (P6), 8-bit RGB; readable by the image loader.
void write_ppm(const std::string& path, int w, int h,
               const std::vector<std::array<uint8_t, 3>>& rgb) {
  std::ofstream os(path, std::ios::binary);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (const auto& px : rgb)
    os.put(char(px[0])).put(char(px[1])).put(char(px[2]));
}

// Binary PGM (P5); maxval 255 or 65535 (16-bit samples are big-endian).
void write_pgm(const std::string& path, int w, int h, int maxval,
               const std::vector<uint16_t>& gray) {
  std::ofstream os(path, std::ios::binary);
  os << "P5\n" << w << " " << h << "\n" << maxval << "\n";
  for (uint16_t v : gray) {
    if (maxval > 255) os.put(char(v >> 8));
    os.put(char(v & 0xff));
  }
}

int chebyshev(const Keypoint& a, const Keypoint& b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

}  // namespace

TEST(LoadImage, GreenChannelPolicyPicksGreenPlane) {
  const std::string path = tmp_path("color.ppm");
  std::vector<std::array<uint8_t, 3>> rgb;
  for (int i = 0; i < 4 * 3; ++i)
    rgb.push_back({uint8_t(10), uint8_t(17 * i), uint8_t(200)});
  write_ppm(path, 4, 3, rgb);

  const ImageGrid g = load_image(path, 0, ChannelPolicy::Green);
  ASSERT_EQ(g.w, 4);
  ASSERT_EQ(g.h, 3);
  for (int i = 0; i < 12; ++i)
    EXPECT_NEAR(g.v[i], (17 * i) / 255.0, 1e-6) << "pixel " << i;
}

TEST(LoadImage, LuminancePolicyMixesChannels) {
  const std::string path = tmp_path("color_lum.ppm");
  // Constant pure-red image: BT.601 luminance 0.299.
  std::vector<std::array<uint8_t, 3>> rgb(6 * 6, {255, 0, 0});
  write_ppm(path, 6, 6, rgb);
  const ImageGrid g = load_image(path, 0, ChannelPolicy::Luminance);
  EXPECT_NEAR(g.v[0], 0.299, 2.0 / 255.0);
  const ImageGrid green = load_image(path, 0, ChannelPolicy::Green);
  EXPECT_NEAR(green.v[0], 0.0, 1e-6);
}

TEST(LoadImage, GrayscalePassthroughAndIdempotence) {
  const std::string path = tmp_path("gray.pgm");
  std::vector<uint16_t> vals;
  for (int i = 0; i < 5 * 5; ++i) vals.push_back(uint16_t(i * 10));
  write_pgm(path, 5, 5, 255, vals);
  const ImageGrid a = load_image(path, 0);
  ASSERT_EQ(a.w, 5);
  for (int i = 0; i < 25; ++i) EXPECT_NEAR(a.v[i], (i * 10) / 255.0, 1e-6);

  // Already-sized input: loading with a matching target changes nothing.
  const ImageGrid b = load_image(path, 5);
  EXPECT_EQ(a.v, b.v);
  EXPECT_EQ(b.native_w, 5);
}

TEST(LoadImage, SixteenBitInputScalesToUnit) {
  const std::string path = tmp_path("deep.pgm");
  write_pgm(path, 2, 2, 65535, {0, 16384, 32768, 65535});
  const ImageGrid g = load_image(path, 0);
  EXPECT_NEAR(g.v[0], 0.0, 1e-7);
  EXPECT_NEAR(g.v[1], 0.25, 1e-4);
  EXPECT_NEAR(g.v[3], 1.0, 1e-7);
}

TEST(LoadImage, RecordedScaleMapsKeypointsBackExactly) {
  const std::string path = tmp_path("big.pgm");
  std::vector<uint16_t> vals(128 * 128, 100);
  write_pgm(path, 128, 128, 255, vals);
  const ImageGrid g = load_image(path, 32);
  EXPECT_EQ(g.w, 32);
  EXPECT_EQ(g.h, 32);
  EXPECT_EQ(g.native_w, 128);
  EXPECT_DOUBLE_EQ(g.scale_x(), 4.0);
  EXPECT_DOUBLE_EQ(g.scale_y(), 4.0);
  // A keypoint detected at working (8, 20) lands on native (32, 80) exactly.
  EXPECT_DOUBLE_EQ(8 * g.scale_x(), 32.0);
  EXPECT_DOUBLE_EQ(20 * g.scale_y(), 80.0);
}

TEST(LoadImage, MissingAndCorruptFilesThrow) {
  EXPECT_THROW(load_image(tmp_path("nope.png"), 0), IoError);
  const std::string path = tmp_path("garbage.png");
  std::ofstream(path) << "this is not an image";
  EXPECT_THROW(load_image(path, 0), IoError);
}

TEST(SaveImage, RoundTripWithinQuantization) {
  Grid g(7, 9);
  for (size_t i = 0; i < g.v.size(); ++i) g.v[i] = float(i) / float(g.v.size());
  const std::string path = tmp_path("roundtrip.png");
  save_image(path, g);
  const ImageGrid back = load_image(path, 0);
  ASSERT_EQ(back.w, 9);
  ASSERT_EQ(back.h, 7);
  for (size_t i = 0; i < g.v.size(); ++i)
    EXPECT_NEAR(back.v[i], g.v[i], 0.5 / 255.0 + 1e-6);
}

TEST(Labels, SaveLoadRoundTrip) {
  LabelFile f;
  f.w = 100;
  f.h = 80;
  f.images.emplace_back("a.png", KeypointSet{{3, 4, 0.f}, {99, 79, 0.f}});
  f.images.emplace_back("b.png", KeypointSet{{0, 0, 0.f}});
  const std::string path = tmp_path("labels.json");
  save_labels(path, f);

  const LabelFile back = load_labels(path);
  EXPECT_EQ(back.w, 100);
  EXPECT_EQ(back.h, 80);
  ASSERT_EQ(back.images.size(), 2u);
  EXPECT_EQ(back.images[0].first, "a.png");
  ASSERT_EQ(back.images[0].second.size(), 2u);
  EXPECT_EQ(back.images[0].second[1].x, 99);
  EXPECT_EQ(back.images[0].second[1].y, 79);
  const KeypointSet* found = back.find("b.png");
  ASSERT_NE(found, nullptr);
  EXPECT_EQ(found->size(), 1u);
  EXPECT_EQ(back.find("c.png"), nullptr);
}

TEST(Labels, OnePastTheEdgeIsOutOfBounds) {
  LabelFile f;
  f.w = 10;
  f.h = 8;
  f.images.emplace_back("a.png", KeypointSet{{10, 8, 0.f}});
  const std::string path = tmp_path("labels_oob.json");
  save_labels(path, f);
  EXPECT_THROW(load_labels(path), IoError);
}

TEST(Labels, DuplicateImageEntryThrows) {
  LabelFile f;
  f.w = 10;
  f.h = 10;
  f.images.emplace_back("a.png", KeypointSet{{1, 1, 0.f}});
  f.images.emplace_back("a.png", KeypointSet{{2, 2, 0.f}});
  const std::string path = tmp_path("labels_dup.json");
  save_labels(path, f);
  EXPECT_THROW(load_labels(path), IoError);
}

TEST(Labels, MalformedJsonThrows) {
  const std::string path = tmp_path("labels_bad.json");
  std::ofstream(path) << "{\"image_size\": [10, 10], \"images\": [{\"file\": 3}]}";
  EXPECT_THROW(load_labels(path), IoError);
  std::ofstream(path) << "not json";
  EXPECT_THROW(load_labels(path), IoError);
  EXPECT_THROW(load_labels(tmp_path("labels_missing.json")), IoError);
}

TEST(Labels, CountOutsideExpectedRangeWarns) {
  LabelFile f;
  f.w = 10;
  f.h = 10;
  f.images.emplace_back("empty.png", KeypointSet{});
  f.images.emplace_back("ok.png", KeypointSet{{1, 1, 0.f}});
  const std::string path = tmp_path("labels_warn.json");
  save_labels(path, f);
  std::vector<std::string> warnings;
  load_labels(path, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("empty.png"), std::string::npos);
}

TEST(Synth, SameSeedIsDeterministic) {
  SynthConfig cfg;
  cfg.size = 128;
  cfg.seed = 42;
  const SynthImage a = synth_vasculature(cfg);
  const SynthImage b = synth_vasculature(cfg);
  EXPECT_EQ(a.image.v, b.image.v);
  ASSERT_EQ(a.bifurcations.size(), b.bifurcations.size());
  for (size_t i = 0; i < a.bifurcations.size(); ++i) {
    EXPECT_EQ(a.bifurcations[i].x, b.bifurcations[i].x);
    EXPECT_EQ(a.bifurcations[i].y, b.bifurcations[i].y);
  }
  cfg.seed = 43;
  EXPECT_NE(synth_vasculature(cfg).image.v, a.image.v);
}

TEST(Synth, DeepTreesProduceBifurcations) {
  SynthConfig cfg;
  cfg.size = 192;
  cfg.depth = 4;
  cfg.seed = 7;
  const SynthImage s = synth_vasculature(cfg);
  EXPECT_GE(s.bifurcations.size(), 3u);
}

TEST(Synth, VesselsDarkerThanBackground) {
  SynthConfig cfg;
  cfg.size = 192;
  cfg.seed = 11;
  const SynthImage s = synth_vasculature(cfg);
  ASSERT_FALSE(s.bifurcations.empty());
  double image_mean = 0.0;
  for (float v : s.image.v) image_mean += v;
  image_mean /= double(s.image.v.size());
  for (const auto& kp : s.bifurcations)
    EXPECT_LT(s.image.at(kp.y, kp.x), image_mean) << "at (" << kp.x << "," << kp.y << ")";
}

TEST(Synth, BifurcationsAreSeparatedAndInBounds) {
  SynthConfig cfg;
  cfg.size = 224;
  cfg.seed = 3;
  const SynthImage s = synth_vasculature(cfg);
  for (size_t i = 0; i < s.bifurcations.size(); ++i) {
    const auto& kp = s.bifurcations[i];
    EXPECT_GE(kp.x, 0);
    EXPECT_LT(kp.x, cfg.size);
    EXPECT_GE(kp.y, 0);
    EXPECT_LT(kp.y, cfg.size);
    for (size_t j = i + 1; j < s.bifurcations.size(); ++j)
      EXPECT_GT(chebyshev(kp, s.bifurcations[j]), 6);
  }
}

TEST(Synth, TinyCanvasRejected) {
  SynthConfig cfg;
  cfg.size = 32;
  EXPECT_THROW(synth_vasculature(cfg), ConfigError);
}

TEST(Pairs, AllPairsCountMatchesVaria) {
  // 233 images in total -> C(233,2) = 27,028 pairs.
  std::vector<std::pair<std::string, std::string>> images;
  for (int i = 0; i < 233; ++i)
    images.emplace_back("eye" + std::to_string(i % 40), "img" + std::to_string(i));
  const PairList pairs = build_verification_pairs(images);
  EXPECT_EQ(pairs.size(), 27028u);
  size_t genuine = 0;
  for (const auto& p : pairs) genuine += p.genuine ? 1 : 0;
  EXPECT_EQ(genuine + (pairs.size() - genuine), 27028u);
  EXPECT_GT(genuine, 0u);
}

TEST(Pairs, SingleEyeAllGenuine) {
  std::vector<std::pair<std::string, std::string>> images;
  for (int i = 0; i < 5; ++i) images.emplace_back("eyeA", "img" + std::to_string(i));
  const PairList pairs = build_verification_pairs(images);
  EXPECT_EQ(pairs.size(), 10u);  // C(5,2)
  for (const auto& p : pairs) EXPECT_TRUE(p.genuine);
}

TEST(Pairs, TwoEyesCrossCount) {
  std::vector<std::pair<std::string, std::string>> images;
  for (int i = 0; i < 3; ++i) images.emplace_back("eyeA", "a" + std::to_string(i));
  for (int i = 0; i < 4; ++i) images.emplace_back("eyeB", "b" + std::to_string(i));
  const PairList pairs = build_verification_pairs(images);
  size_t genuine = 0, impostor = 0;
  for (const auto& p : pairs) (p.genuine ? genuine : impostor) += 1;
  EXPECT_EQ(genuine, 3u + 6u);  // C(3,2) + C(4,2)
  EXPECT_EQ(impostor, 12u);     // 3 * 4
}

TEST(Pairs, ImpostorSubsamplingIsDeterministic) {
  std::vector<std::pair<std::string, std::string>> images;
  for (int i = 0; i < 3; ++i) images.emplace_back("eyeA", "a" + std::to_string(i));
  for (int i = 0; i < 4; ++i) images.emplace_back("eyeB", "b" + std::to_string(i));
  const PairList full = build_verification_pairs(images);
  const PairList sub1 = build_verification_pairs(images, 5, 99);
  const PairList sub2 = build_verification_pairs(images, 5, 99);
  size_t genuine = 0, impostor = 0;
  for (const auto& p : sub1) (p.genuine ? genuine : impostor) += 1;
  EXPECT_EQ(genuine, 9u);  // untouched
  EXPECT_EQ(impostor, 5u);
  ASSERT_EQ(sub1.size(), sub2.size());
  for (size_t i = 0; i < sub1.size(); ++i) {
    EXPECT_EQ(sub1[i].a, sub2[i].a);
    EXPECT_EQ(sub1[i].b, sub2[i].b);
  }
  // Every subsampled impostor pair exists in the full list.
  for (const auto& p : sub1) {
    if (p.genuine) continue;
    bool found = false;
    for (const auto& q : full)
      if (q.a == p.a && q.b == p.b && !q.genuine) found = true;
    EXPECT_TRUE(found) << p.a << "," << p.b;
  }
}

TEST(Pairs, FewerThanTwoImagesThrows) {
  EXPECT_THROW(build_verification_pairs({{"eyeA", "a0"}}), ConfigError);
}

TEST(Manifest, SaveLoadRoundTrip) {
  PairList pairs;
  pairs.push_back({"a0", "a1", true, ""});
  pairs.push_back({"a0", "b0", false, ""});
  pairs.push_back({"q3", "r3", false, "ctrl/q3_r3.csv"});
  const std::string path = tmp_path("pairs.csv");
  save_pair_manifest(path, pairs);
  const PairList back = load_pair_manifest(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].a, "a0");
  EXPECT_TRUE(back[0].genuine);
  EXPECT_FALSE(back[1].genuine);
  EXPECT_TRUE(back[1].control_path.empty());
  EXPECT_EQ(back[2].control_path, "ctrl/q3_r3.csv");
  EXPECT_THROW(load_pair_manifest(tmp_path("missing.csv")), IoError);
}

TEST(Manifest, MalformedLineThrows) {
  const std::string path = tmp_path("pairs_bad.csv");
  std::ofstream(path) << "only_two,fields\n";
  EXPECT_THROW(load_pair_manifest(path), IoError);
}

TEST(ControlPoints, RoundTripIsExact) {
  std::vector<ControlPair> pts = {{1.5, 2.25, 3.125, 4.0625},
                                  {0.1, 0.2, 0.3, 0.4},
                                  {2911.0, 0.0, 1.0, 2911.0}};
  const std::string path = tmp_path("ctrl.csv");
  save_control_points(path, pts);
  const std::vector<ControlPair> back = load_control_points(path);
  ASSERT_EQ(back.size(), 3u);
  for (size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(back[i].xq, pts[i].xq);
    EXPECT_DOUBLE_EQ(back[i].yq, pts[i].yq);
    EXPECT_DOUBLE_EQ(back[i].xr, pts[i].xr);
    EXPECT_DOUBLE_EQ(back[i].yr, pts[i].yr);
  }
}

TEST(ControlPoints, MalformedRecordsThrow) {
  const std::string path = tmp_path("ctrl_bad.csv");
  std::ofstream(path) << "1,2,3\n";
  EXPECT_THROW(load_control_points(path), IoError);
  std::ofstream(path) << "1,2,three,4\n";
  EXPECT_THROW(load_control_points(path), IoError);
  EXPECT_THROW(load_control_points(tmp_path("ctrl_missing.csv")), IoError);
}
