#include "retinamatch/viz.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace retina {

namespace {

cv::Mat to_bgr(const Grid& g) {
  cv::Mat gray(g.h, g.w, CV_8UC1);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x)
      gray.at<uint8_t>(y, x) = uint8_t(std::clamp(g.at(y, x), 0.f, 1.f) * 255.f + 0.5f);
  cv::Mat bgr;
  cv::cvtColor(gray, bgr, cv::COLOR_GRAY2BGR);
  return bgr;
}

}  // namespace

OverlayCounts overlay_counts(const std::vector<Match>& matches,
                             const std::vector<uint8_t>& inlier_mask) {
  OverlayCounts c;
  for (size_t i = 0; i < matches.size(); ++i) {
    const bool in = i < inlier_mask.size() && inlier_mask[i] != 0;
    (in ? c.green : c.red) += 1;
  }
  return c;
}

void render_overlay(const Grid& query, const Grid& reference, const KeypointSet& kq,
                    const KeypointSet& kr, const std::vector<Match>& matches,
                    const std::vector<uint8_t>& inlier_mask, const std::string& out_path,
                    const OverlayOptions& opts) {
  if (!inlier_mask.empty() && inlier_mask.size() != matches.size())
    throw ShapeError("render_overlay: inlier mask does not align with matches");
  cv::Mat left = to_bgr(query);
  cv::Mat right = to_bgr(reference);
  const int h = std::max(left.rows, right.rows);
  cv::Mat canvas(h, left.cols + right.cols, CV_8UC3, cv::Scalar(0, 0, 0));
  left.copyTo(canvas(cv::Rect(0, 0, left.cols, left.rows)));
  right.copyTo(canvas(cv::Rect(left.cols, 0, right.cols, right.rows)));

  const cv::Scalar green(0, 200, 0), red(0, 0, 220);
  for (size_t i = 0; i < matches.size(); ++i) {
    const Match& m = matches[i];
    const Keypoint& a = kq.at(size_t(m.iq));
    const Keypoint& b = kr.at(size_t(m.ir));
    const bool in = i < inlier_mask.size() && inlier_mask[i] != 0;
    const cv::Scalar& color = in ? green : red;
    const cv::Point pa(a.x, a.y);
    const cv::Point pb(b.x + left.cols, b.y);
    if (opts.draw_lines) cv::line(canvas, pa, pb, color, 1, cv::LINE_AA);
    cv::circle(canvas, pa, opts.dot_radius, color, cv::FILLED, cv::LINE_AA);
    cv::circle(canvas, pb, opts.dot_radius, color, cv::FILLED, cv::LINE_AA);
  }
  if (!cv::imwrite(out_path, canvas))
    throw IoError("render_overlay: cannot write " + out_path);
}

}  // namespace retina
