#include "globaltrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gt {

namespace {
constexpr double kDeltaClamp = 4.135166556742356;  // ln(1000/16)

void require_valid(const Box& b, const char* who) {
  if (!b.valid()) throw std::invalid_argument(std::string(who) + ": degenerate box");
}
}  // namespace

Box Box::clipped(double img_w, double img_h) const {
  Box out;
  out.x1 = std::clamp(x1, 0.0, img_w);
  out.y1 = std::clamp(y1, 0.0, img_h);
  out.x2 = std::clamp(x2, 0.0, img_w);
  out.y2 = std::clamp(y2, 0.0, img_h);
  return out;
}

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

BoxDelta encode_delta(const Box& target, const Box& anchor) {
  require_valid(target, "encode_delta");
  require_valid(anchor, "encode_delta");
  BoxDelta d;
  d.dx = (target.cx() - anchor.cx()) / anchor.width();
  d.dy = (target.cy() - anchor.cy()) / anchor.height();
  d.dw = std::log(target.width() / anchor.width());
  d.dh = std::log(target.height() / anchor.height());
  return d;
}

Box decode_delta(const BoxDelta& delta, const Box& anchor,
                 std::optional<std::pair<double, double>> image_size) {
  require_valid(anchor, "decode_delta");
  const double dw = std::clamp(delta.dw, -kDeltaClamp, kDeltaClamp);
  const double dh = std::clamp(delta.dh, -kDeltaClamp, kDeltaClamp);
  const double cx = anchor.cx() + delta.dx * anchor.width();
  const double cy = anchor.cy() + delta.dy * anchor.height();
  const double w = anchor.width() * std::exp(dw);
  const double h = anchor.height() * std::exp(dh);
  Box out = Box::from_center(cx, cy, w, h);
  if (image_size) out = out.clipped(image_size->first, image_size->second);
  return out;
}

std::vector<Prediction> nms(const std::vector<Prediction>& predictions,
                            double iou_threshold) {
  std::vector<size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (predictions[a].score != predictions[b].score)
      return predictions[a].score > predictions[b].score;
    return a < b;
  });

  std::vector<Prediction> kept;
  std::vector<char> suppressed(predictions.size(), 0);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(predictions[i]);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const size_t j = order[oj];
      if (suppressed[j]) continue;
      if (iou(predictions[i].box, predictions[j].box) > iou_threshold)
        suppressed[j] = 1;
    }
  }
  return kept;
}

std::vector<Box> generate_anchors(int64_t feature_h, int64_t feature_w,
                                  const AnchorGridConfig& grid) {
  if (feature_h <= 0 || feature_w <= 0)
    throw std::invalid_argument("generate_anchors: non-positive grid");
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(feature_h * feature_w) * grid.scales.size() *
                  grid.ratios.size());
  for (int64_t y = 0; y < feature_h; ++y) {
    for (int64_t x = 0; x < feature_w; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) * grid.stride;
      const double cy = (static_cast<double>(y) + 0.5) * grid.stride;
      for (double s : grid.scales) {
        for (double r : grid.ratios) {
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          anchors.push_back(Box::from_center(cx, cy, w, h));
        }
      }
    }
  }
  return anchors;
}

}  // namespace gt
