#include "globaltrack/model.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace gt {

using ad::Var;

GlobalTrackModel::GlobalTrackModel(ModelConfig config, uint64_t seed)
    : config_(std::move(config)) {
  std::mt19937_64 rng(seed);
  backbone_ = make_backbone(params_, config_, rng);
  rpn_mod_ = make_rpn_modulation(params_, config_, rng);
  rcnn_mod_ = make_rcnn_modulation(params_, config_, rng);

  // Anchor layout: with a pyramid and one scale per level, each level owns
  // its scale; otherwise every level carries the full scale set.
  const size_t n_levels = config_.pyramid ? 3 : 1;
  const auto& base = config_.anchors;
  for (size_t li = 0; li < n_levels; ++li) {
    AnchorGridConfig level = base;
    if (n_levels > 1 && base.scales.size() == n_levels)
      level.scales = {base.scales[li]};
    level.stride = config_.pyramid ? (8 << li) : config_.stride;
    level_anchors_.push_back(level);
  }
  const int64_t per_cell =
      static_cast<int64_t>(level_anchors_[0].scales.size() * level_anchors_[0].ratios.size());

  const int64_t c = config_.channels;
  rpn_head_.shared = make_conv(params_, "rpn_head.shared", c, c, 3, 1, 1, rng);
  rpn_head_.cls = make_conv(params_, "rpn_head.cls", c, per_cell, 1, 1, 0, rng);
  rpn_head_.reg = make_conv(params_, "rpn_head.reg", c, 4 * per_cell, 1, 1, 0, rng);
  rpn_head_.anchors_per_cell = per_cell;

  const int64_t flat = c * config_.roi_size * config_.roi_size;
  rcnn_head_.fc1 = make_linear(params_, "rcnn_head.fc1", flat, config_.rcnn_hidden, rng);
  rcnn_head_.fc2 = make_linear(params_, "rcnn_head.fc2", config_.rcnn_hidden, config_.rcnn_hidden, rng);
  rcnn_head_.cls = make_linear(params_, "rcnn_head.cls", config_.rcnn_hidden, 1, rng);
  rcnn_head_.reg = make_linear(params_, "rcnn_head.reg", config_.rcnn_hidden, 4, rng);
}

const AnchorGridConfig& GlobalTrackModel::anchor_config(size_t level) const {
  return level_anchors_.at(level);
}

std::vector<FeatureLevel> GlobalTrackModel::extract_features(const Tensor& image) const {
  return backbone_->forward(ad::constant(image));
}

ad::Var GlobalTrackModel::pool_query(const std::vector<FeatureLevel>& levels, const Box& box,
                                     double image_w, double image_h) const {
  if (!box.valid()) throw std::invalid_argument("pool_query: degenerate box");
  const size_t level = roi_level_for_box(levels, box);
  return pool_roi(levels[level], box, config_.roi_size, image_w, image_h);
}

RpnOutputs GlobalTrackModel::rpn_forward(const Var& z,
                                         const std::vector<FeatureLevel>& levels) const {
  if (levels.size() != level_anchors_.size())
    throw std::invalid_argument("rpn_forward: level count mismatch");
  std::vector<Var> logit_parts, delta_parts;
  RpnOutputs out;
  for (size_t li = 0; li < levels.size(); ++li) {
    Var modulated = rpn_mod_.apply(z, levels[li].map);
    Var shared = ad::relu(rpn_head_.shared(modulated));
    Var logits = rpn_head_.cls(shared);  // [1, A, h, w]
    Var deltas = rpn_head_.reg(shared);  // [1, 4A, h, w]
    const int64_t h = logits->value.dim(2), w = logits->value.dim(3);
    const int64_t cells = h * w * rpn_head_.anchors_per_cell;
    logit_parts.push_back(ad::reshape(ad::chw_to_hwc(logits), {cells}));
    delta_parts.push_back(ad::reshape(ad::chw_to_hwc(deltas), {cells, 4}));
    auto anchors = generate_anchors(h, w, level_anchors_[li]);
    out.anchors.insert(out.anchors.end(), anchors.begin(), anchors.end());
  }
  out.logits = logit_parts.size() == 1 ? logit_parts[0] : ad::concat0(logit_parts);
  out.deltas = delta_parts.size() == 1 ? delta_parts[0] : ad::concat0(delta_parts);
  return out;
}

RcnnOutputs GlobalTrackModel::rcnn_forward(const Var& z,
                                           const std::vector<FeatureLevel>& levels,
                                           const std::vector<Box>& proposals,
                                           double image_w, double image_h) const {
  if (proposals.empty()) throw std::invalid_argument("rcnn_forward: empty proposal list");

  // Pool per level, then restore the original proposal order.
  Var pooled;
  if (levels.size() == 1) {
    std::vector<Box> clipped;
    clipped.reserve(proposals.size());
    for (const auto& p : proposals) clipped.push_back(p.clipped(image_w, image_h));
    pooled = ad::roi_align(levels[0].map, clipped, config_.roi_size, 1.0 / levels[0].stride);
  } else {
    std::vector<std::vector<Box>> by_level(levels.size());
    std::vector<std::vector<int64_t>> order(levels.size());
    for (size_t i = 0; i < proposals.size(); ++i) {
      const size_t li = roi_level_for_box(levels, proposals[i]);
      by_level[li].push_back(proposals[i].clipped(image_w, image_h));
      order[li].push_back(static_cast<int64_t>(i));
    }
    std::vector<Var> parts;
    std::vector<int64_t> position(proposals.size());
    int64_t running = 0;
    for (size_t li = 0; li < levels.size(); ++li) {
      if (by_level[li].empty()) continue;
      parts.push_back(ad::roi_align(levels[li].map, by_level[li], config_.roi_size,
                                    1.0 / levels[li].stride));
      for (int64_t idx : order[li]) position[static_cast<size_t>(idx)] = running++;
    }
    pooled = ad::gather0(parts.size() == 1 ? parts[0] : ad::concat0(parts),
                         std::vector<int64_t>(position.begin(), position.end()));
  }

  Var modulated = rcnn_mod_.apply(z, pooled);
  const int64_t n = modulated->value.dim(0);
  Var flat = ad::reshape(modulated, {n, modulated->value.numel() / n});
  Var hidden = ad::relu(rcnn_head_.fc1(flat));
  hidden = ad::relu(rcnn_head_.fc2(hidden));

  RcnnOutputs out;
  out.logits = ad::reshape(rcnn_head_.cls(hidden), {n});
  out.deltas = rcnn_head_.reg(hidden);
  out.proposals = proposals;
  return out;
}

std::vector<Prediction> GlobalTrackModel::classify_and_refine(
    const Var& z, const std::vector<FeatureLevel>& levels,
    const std::vector<Box>& proposals, double image_w, double image_h) const {
  RcnnOutputs out = rcnn_forward(z, levels, proposals, image_w, image_h);
  return final_predictions(out, image_w, image_h);
}

}  // namespace gt
