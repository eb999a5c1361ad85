#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace gt {

/// Axis-aligned rectangle in continuous pixel coordinates, corner
/// convention: x2 > x1, y2 > y1.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  static Box from_xywh(double x, double y, double w, double h) {
    return {x, y, x + w, y + h};
  }

  Box clipped(double img_w, double img_h) const;
};

/// Center/scale offsets of a target box relative to an anchor:
/// dx = (cx_t - cx_a)/w_a, dy likewise, dw = ln(w_t/w_a), dh = ln(h_t/h_a).
struct BoxDelta {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

struct Prediction {
  Box box;
  double score = 0;      // sigmoid-activated confidence
  BoxDelta delta;        // raw regression output
  int64_t index = -1;    // source anchor / proposal index
};

struct AnchorGridConfig {
  std::vector<double> scales = {32, 64, 128, 256, 512};
  std::vector<double> ratios = {0.5, 1.0, 2.0};
  double stride = 16;
};

// Intersection-over-union; 0 for disjoint or edge-touching boxes.
// Throws std::invalid_argument on degenerate boxes.
double iou(const Box& a, const Box& b);

BoxDelta encode_delta(const Box& target, const Box& anchor);

// Inverse of encode_delta. dw/dh are clamped to |.| <= ln(1000/16) before
// exponentiation. When image_size = (w, h) is given the result is clipped.
Box decode_delta(const BoxDelta& delta, const Box& anchor,
                 std::optional<std::pair<double, double>> image_size = {});

// Greedy NMS: score-descending, ties broken by lower original index.
// Kept boxes suppress remaining ones with iou > threshold.
std::vector<Prediction> nms(const std::vector<Prediction>& predictions,
                            double iou_threshold);

// Row-major enumeration: for each cell (y, x), for each scale, for each
// ratio. Anchor centers sit at ((x + 0.5) * stride, (y + 0.5) * stride).
// A ratio r anchor of scale s has w = s / sqrt(r), h = s * sqrt(r).
std::vector<Box> generate_anchors(int64_t feature_h, int64_t feature_w,
                                  const AnchorGridConfig& grid);

}  // namespace gt
