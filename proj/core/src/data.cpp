#include "retinamatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "nlohmann/json.hpp"
#include "retinamatch/rng.hpp"

namespace retina {

using json = nlohmann::json;

ImageGrid load_image(const std::string& path, int target_size, ChannelPolicy policy) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw IoError("cannot read image: " + path);
  if (raw.depth() != CV_8U && raw.depth() != CV_16U)
    throw IoError("unsupported bit depth in " + path);

  cv::Mat gray;
  if (raw.channels() == 1) {
    gray = raw;
  } else if (raw.channels() == 3 || raw.channels() == 4) {
    if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2BGR);
    if (policy == ChannelPolicy::Green) {
      cv::extractChannel(raw, gray, 1);  // BGR -> green plane
    } else {
      cv::cvtColor(raw, gray, cv::COLOR_BGR2GRAY);
    }
  } else {
    throw IoError("unsupported channel count in " + path);
  }

  cv::Mat f32;
  gray.convertTo(f32, CV_32F, raw.depth() == CV_8U ? 1.0 / 255.0 : 1.0 / 65535.0);

  const int native_w = f32.cols, native_h = f32.rows;
  if (target_size > 0 && (f32.cols != target_size || f32.rows != target_size))
    cv::resize(f32, f32, cv::Size(target_size, target_size), 0, 0, cv::INTER_LINEAR);

  ImageGrid g(f32.rows, f32.cols);
  g.native_w = native_w;
  g.native_h = native_h;
  for (int y = 0; y < f32.rows; ++y) {
    const float* row = f32.ptr<float>(y);
    std::copy(row, row + f32.cols, g.v.begin() + size_t(y) * g.w);
  }
  return g;
}

void save_image(const std::string& path, const Grid& g) {
  cv::Mat m(g.h, g.w, CV_8U);
  for (int y = 0; y < g.h; ++y) {
    uchar* row = m.ptr<uchar>(y);
    for (int x = 0; x < g.w; ++x) {
      const float v = std::clamp(g.at(y, x), 0.f, 1.f);
      row[x] = uchar(std::lround(v * 255.0));
    }
  }
  if (!cv::imwrite(path, m)) throw IoError("cannot write image: " + path);
}

const KeypointSet* LabelFile::find(const std::string& file) const {
  for (const auto& [name, kps] : images)
    if (name == file) return &kps;
  return nullptr;
}

LabelFile load_labels(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open label file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed label file " + path + ": " + e.what());
  }
  LabelFile out;
  try {
    out.w = j.at("image_size").at(0).get<int>();
    out.h = j.at("image_size").at(1).get<int>();
    for (const auto& img : j.at("images")) {
      const std::string file = img.at("file").get<std::string>();
      if (out.find(file)) throw IoError("duplicate image entry in " + path + ": " + file);
      KeypointSet kps;
      for (const auto& p : img.at("keypoints")) {
        Keypoint kp;
        kp.x = p.at(0).get<int>();
        kp.y = p.at(1).get<int>();
        if (kp.x < 0 || kp.x >= out.w || kp.y < 0 || kp.y >= out.h)
          throw IoError("keypoint (" + std::to_string(kp.x) + "," + std::to_string(kp.y) +
                        ") out of bounds for image_size [" + std::to_string(out.w) + "," +
                        std::to_string(out.h) + "] in " + path);
        kps.push_back(kp);
      }
      if (warnings && (kps.size() < 1 || kps.size() > 10000))
        warnings->push_back(file + ": keypoint count " + std::to_string(kps.size()) +
                            " outside the expected [1, 10000] range");
      out.images.emplace_back(file, std::move(kps));
    }
  } catch (const json::exception& e) {
    throw IoError("malformed label file " + path + ": " + e.what());
  }
  return out;
}

void save_labels(const std::string& path, const LabelFile& labels) {
  json j;
  j["image_size"] = {labels.w, labels.h};
  j["images"] = json::array();
  for (const auto& [file, kps] : labels.images) {
    json img;
    img["file"] = file;
    img["keypoints"] = json::array();
    for (const auto& kp : kps) img["keypoints"].push_back({kp.x, kp.y});
    j["images"].push_back(std::move(img));
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot write label file: " + path);
  os << j.dump(2) << "\n";
}

namespace {

// Low-frequency texture: a handful of seeded sinusoid plaids.
struct Texture {
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;

  Texture(Rng& rng, double amplitude) {
    for (int k = 0; k < 6; ++k) {
      Wave w;
      const double freq = rng.uniform(1.0, 4.0);
      const double theta = rng.uniform(0.0, 2.0 * M_PI);
      w.fx = freq * std::cos(theta);
      w.fy = freq * std::sin(theta);
      w.phase = rng.uniform(0.0, 2.0 * M_PI);
      w.amp = amplitude * rng.uniform(0.3, 1.0) / 3.0;
      waves.push_back(w);
    }
  }

  double operator()(double u, double v) const {  // u, v in [0,1]
    double s = 0.0;
    for (const auto& w : waves) s += w.amp * std::sin(2.0 * M_PI * (w.fx * u + w.fy * v) + w.phase);
    return s;
  }
};

struct Segment {
  double x0, y0, x1, y1, width;
};

// Stamp an anti-aliased dark capsule onto the coverage map.
void draw_segment(Grid& cov, const Segment& s) {
  const double r = s.width * 0.5;
  const int x0 = std::max(0, int(std::floor(std::min(s.x0, s.x1) - r - 1)));
  const int x1 = std::min(cov.w - 1, int(std::ceil(std::max(s.x0, s.x1) + r + 1)));
  const int y0 = std::max(0, int(std::floor(std::min(s.y0, s.y1) - r - 1)));
  const int y1 = std::min(cov.h - 1, int(std::ceil(std::max(s.y0, s.y1) + r + 1)));
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      double t = len2 > 0 ? ((x - s.x0) * dx + (y - s.y0) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double px = s.x0 + t * dx, py = s.y0 + t * dy;
      const double dist = std::hypot(x - px, y - py);
      // 1 inside the capsule, linear falloff over one pixel at the rim.
      const double c = std::clamp(r + 0.5 - dist, 0.0, 1.0);
      if (c > cov.at(y, x)) cov.at(y, x) = float(c);
    }
  }
}

struct Branch {
  double x, y, angle, length, width;
  int depth;
};

}  // namespace

SynthImage synth_vasculature(const SynthConfig& cfg) {
  if (cfg.size < 64) throw ConfigError("synth_vasculature: size must be >= 64");
  Rng rng(cfg.seed);
  const int s = cfg.size;
  const double cx = (s - 1) / 2.0, cy = (s - 1) / 2.0;
  const double disc_r = 0.48 * s;

  Texture tex(rng, cfg.texture_amplitude);

  // Brighter textured disc on a dark surround, fundus-like polarity.
  ImageGrid img(s, s);
  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      const double rr = std::hypot(x - cx, y - cy) / disc_r;
      const double vignette = std::clamp(1.0 - rr * rr * 0.35, 0.0, 1.0);
      const double rim = std::clamp((1.0 - rr) * 8.0, 0.0, 1.0);  // soft disc edge
      double v = 0.08 + rim * (0.55 * vignette + tex(double(x) / s, double(y) / s));
      img.at(y, x) = float(std::clamp(v, 0.0, 1.0));
    }
  }

  // Grow the branching tree from a few trunks leaving an off-center "disc".
  Grid cov(s, s);
  KeypointSet bifs;
  const double rootx = cx + 0.28 * s * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  const double rooty = cy + rng.uniform(-0.1, 0.1) * s;
  const int trunks = 3 + int(rng.uniform_int(2));  // 3 or 4
  std::vector<Branch> stack;
  for (int k = 0; k < trunks; ++k) {
    Branch b;
    b.x = rootx;
    b.y = rooty;
    b.angle = rng.uniform(0.0, 2.0 * M_PI);
    b.length = s * rng.uniform(0.16, 0.22);
    b.width = cfg.vessel_width;
    b.depth = 0;
    stack.push_back(b);
  }

  const double margin = 10.0;
  while (!stack.empty()) {
    Branch b = stack.back();
    stack.pop_back();

    // Trace the branch in gently curving substeps.
    double x = b.x, y = b.y, ang = b.angle;
    const int steps = 4;
    const double step_len = b.length / steps;
    for (int i = 0; i < steps; ++i) {
      ang += rng.uniform(-0.12, 0.12);
      const double nx = x + step_len * std::cos(ang);
      const double ny = y + step_len * std::sin(ang);
      draw_segment(cov, {x, y, nx, ny, b.width});
      x = nx;
      y = ny;
    }

    if (b.depth + 1 >= cfg.depth) continue;
    if (x < margin || x > s - 1 - margin || y < margin || y > s - 1 - margin) continue;

    // Split: the endpoint becomes a bifurcation.
    bifs.push_back({int(std::lround(x)), int(std::lround(y)), 1.f});
    const double half = rng.uniform(cfg.branch_angle_deg.lo, cfg.branch_angle_deg.hi) * M_PI / 180.0;
    const double skew = rng.uniform(-0.25, 0.25);
    for (int child = 0; child < 2; ++child) {
      Branch c;
      c.x = x;
      c.y = y;
      c.angle = ang + (child == 0 ? half : -half) + skew;
      c.length = b.length * rng.uniform(0.72, 0.88);
      c.width = std::max(1.1, b.width * 0.82);
      c.depth = b.depth + 1;
      stack.push_back(c);
    }
  }

  // Composite: vessels darken the background.
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double c = cov.at(y, x);
      img.at(y, x) = float(std::clamp(img.at(y, x) * (1.0 - cfg.vessel_contrast * c), 0.0, 1.0));
    }

  // Ground truth: drop bifurcations that left the canvas or crowd an
  // earlier one (Chebyshev separation > 6 px keeps labels NMS-compatible).
  KeypointSet kept;
  for (const auto& kp : bifs) {
    if (kp.x < int(margin) || kp.x >= s - int(margin) || kp.y < int(margin) ||
        kp.y >= s - int(margin))
      continue;
    bool ok = true;
    for (const auto& q : kept)
      if (std::max(std::abs(q.x - kp.x), std::abs(q.y - kp.y)) <= 6) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(kp);
  }

  SynthImage out;
  out.image = std::move(img);
  out.bifurcations = std::move(kept);
  return out;
}

PairList build_verification_pairs(const std::vector<std::pair<std::string, std::string>>& images,
                                  int impostor_target, uint64_t seed) {
  if (images.size() < 2) throw ConfigError("build_verification_pairs: need >= 2 images");
  PairList genuine, impostor;
  for (size_t i = 0; i < images.size(); ++i)
    for (size_t j = i + 1; j < images.size(); ++j) {
      Pair p;
      p.a = images[i].second;
      p.b = images[j].second;
      p.genuine = images[i].first == images[j].first;
      (p.genuine ? genuine : impostor).push_back(std::move(p));
    }
  if (impostor_target > 0 && impostor_target < int(impostor.size())) {
    // Deterministic partial Fisher-Yates draw of `impostor_target` entries.
    Rng rng(seed);
    for (int k = 0; k < impostor_target; ++k) {
      const size_t j = k + size_t(rng.uniform_int(uint64_t(impostor.size() - k)));
      std::swap(impostor[k], impostor[j]);
    }
    impostor.resize(impostor_target);
  }
  PairList out = std::move(genuine);
  out.insert(out.end(), impostor.begin(), impostor.end());
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

PairList load_pair_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pair manifest: " + path);
  PairList out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected idA,idB,label");
    Pair p;
    p.a = f[0];
    p.b = f[1];
    if (f[2] == "genuine") {
      p.genuine = true;
    } else if (f[2] == "impostor") {
      p.genuine = false;
    } else {
      p.control_path = f[2];
    }
    out.push_back(std::move(p));
  }
  return out;
}

void save_pair_manifest(const std::string& path, const PairList& pairs) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write pair manifest: " + path);
  for (const auto& p : pairs) {
    const std::string label =
        !p.control_path.empty() ? p.control_path : (p.genuine ? "genuine" : "impostor");
    os << p.a << "," << p.b << "," << label << "\n";
  }
}

std::vector<ControlPair> load_control_points(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open control-point file: " + path);
  std::vector<ControlPair> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4)
      throw IoError(path + ":" + std::to_string(lineno) + ": expected xq,yq,xr,yr");
    try {
      out.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      throw IoError(path + ":" + std::to_string(lineno) + ": non-numeric control point");
    }
  }
  return out;
}

void save_control_points(const std::string& path, const std::vector<ControlPair>& pts) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write control-point file: " + path);
  os.precision(17);
  for (const auto& p : pts) os << p.xq << "," << p.yq << "," << p.xr << "," << p.yr << "\n";
}

}  // namespace retina
