#include "globaltrack/qg_rpn.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace gt {

std::vector<AnchorTarget> assign_anchor_targets(const std::vector<Box>& anchors,
                                                const Box& groundtruth,
                                                double hi_threshold, double lo_threshold) {
  if (anchors.empty()) throw std::invalid_argument("assign_anchor_targets: no anchors");
  std::vector<AnchorTarget> targets(anchors.size());
  double best_iou = -1;
  size_t best_idx = 0;
  for (size_t i = 0; i < anchors.size(); ++i) {
    const double v = iou(anchors[i], groundtruth);
    if (v > best_iou) { best_iou = v; best_idx = i; }
    if (v >= hi_threshold) targets[i].label = AnchorLabel::positive;
    else if (v <= lo_threshold) targets[i].label = AnchorLabel::negative;
    else targets[i].label = AnchorLabel::ignore;
  }
  // The best-overlapping anchor is positive even below the threshold.
  targets[best_idx].label = AnchorLabel::positive;
  for (size_t i = 0; i < anchors.size(); ++i)
    if (targets[i].label == AnchorLabel::positive)
      targets[i].target_delta = encode_delta(groundtruth, anchors[i]);
  return targets;
}

StageLoss rpn_loss(const RpnOutputs& outputs, const std::vector<AnchorTarget>& targets,
                   const RpnLossConfig& config, std::mt19937_64& rng) {
  if (targets.size() != static_cast<size_t>(outputs.logits->value.numel()))
    throw std::invalid_argument("rpn_loss: targets misaligned with predictions");

  std::vector<int64_t> positives, negatives;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].label == AnchorLabel::positive) positives.push_back(static_cast<int64_t>(i));
    else if (targets[i].label == AnchorLabel::negative) negatives.push_back(static_cast<int64_t>(i));
  }
  std::shuffle(positives.begin(), positives.end(), rng);
  std::shuffle(negatives.begin(), negatives.end(), rng);
  const int64_t max_pos = static_cast<int64_t>(config.sample_count * config.positive_fraction);
  if (static_cast<int64_t>(positives.size()) > max_pos) positives.resize(max_pos);
  const int64_t want_neg = config.sample_count - static_cast<int64_t>(positives.size());
  if (static_cast<int64_t>(negatives.size()) > want_neg) negatives.resize(std::max<int64_t>(want_neg, 0));

  std::vector<int64_t> sampled = positives;
  sampled.insert(sampled.end(), negatives.begin(), negatives.end());
  if (sampled.empty()) throw std::invalid_argument("rpn_loss: no sampled anchors");

  const int64_t n_cls = static_cast<int64_t>(sampled.size());
  const int64_t n_loc = std::max<int64_t>(static_cast<int64_t>(positives.size()), 1);

  Tensor cls_targets({n_cls});
  Tensor cls_weights = Tensor::full({n_cls}, 1.0);
  for (int64_t i = 0; i < n_cls; ++i)
    cls_targets[i] = targets[sampled[i]].label == AnchorLabel::positive ? 1.0 : 0.0;

  StageLoss result;
  ad::Var cls = ad::scale(
      ad::bce_with_logits_sum(ad::gather0(outputs.logits, sampled), cls_targets, cls_weights),
      1.0 / static_cast<double>(n_cls));

  ad::Var loc;
  if (!positives.empty()) {
    Tensor loc_targets({static_cast<int64_t>(positives.size()), 4});
    Tensor row_w = Tensor::full({static_cast<int64_t>(positives.size())}, 1.0);
    for (size_t i = 0; i < positives.size(); ++i) {
      const BoxDelta& d = targets[positives[i]].target_delta;
      loc_targets.at(static_cast<int64_t>(i), 0) = d.dx;
      loc_targets.at(static_cast<int64_t>(i), 1) = d.dy;
      loc_targets.at(static_cast<int64_t>(i), 2) = d.dw;
      loc_targets.at(static_cast<int64_t>(i), 3) = d.dh;
    }
    loc = ad::scale(ad::smooth_l1_sum(ad::gather0(outputs.deltas, positives), loc_targets,
                                      row_w, config.smooth_l1_beta),
                    1.0 / static_cast<double>(n_loc));
  } else {
    loc = ad::constant(Tensor::scalar(0.0));
  }

  result.cls = cls->value.item();
  result.loc = loc->value.item();
  result.total = positives.empty() ? cls : ad::add(cls, ad::scale(loc, config.lambda));
  if (positives.empty()) result.loc = 0;
  return result;
}

std::vector<Prediction> propose(const RpnOutputs& outputs, double image_w, double image_h,
                                const ProposalConfig& config) {
  const int64_t n = outputs.logits->value.numel();
  if (static_cast<size_t>(n) != outputs.anchors.size())
    throw std::invalid_argument("propose: anchors misaligned with logits");

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    const double sa = outputs.logits->value[a], sb = outputs.logits->value[b];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  if (static_cast<int64_t>(order.size()) > config.pre_nms_topk)
    order.resize(static_cast<size_t>(config.pre_nms_topk));

  std::vector<Prediction> candidates;
  candidates.reserve(order.size());
  for (int64_t idx : order) {
    BoxDelta d{outputs.deltas->value.at(idx, 0), outputs.deltas->value.at(idx, 1),
               outputs.deltas->value.at(idx, 2), outputs.deltas->value.at(idx, 3)};
    Box decoded = decode_delta(d, outputs.anchors[static_cast<size_t>(idx)],
                               {{image_w, image_h}});
    if (!decoded.valid()) continue;  // clipped away entirely
    Prediction p;
    p.box = decoded;
    p.score = 1.0 / (1.0 + std::exp(-outputs.logits->value[idx]));
    p.delta = d;
    p.index = idx;
    candidates.push_back(p);
  }

  auto kept = nms(candidates, config.nms_threshold);
  if (static_cast<int64_t>(kept.size()) > config.max_proposals)
    kept.resize(static_cast<size_t>(config.max_proposals));
  return kept;
}

}  // namespace gt
