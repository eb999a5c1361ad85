#include "globaltrack/qg_rcnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gt {

std::vector<ProposalTarget> assign_proposal_targets(const std::vector<Box>& proposals,
                                                    const Box& groundtruth,
                                                    double iou_threshold) {
  if (proposals.empty()) throw std::invalid_argument("assign_proposal_targets: no proposals");
  std::vector<ProposalTarget> targets(proposals.size());
  for (size_t i = 0; i < proposals.size(); ++i) {
    if (iou(proposals[i], groundtruth) >= iou_threshold) {
      targets[i].p_star = 1;
      targets[i].target_delta = encode_delta(groundtruth, proposals[i]);
    }
  }
  return targets;
}

std::vector<int64_t> sample_proposals(const std::vector<ProposalTarget>& targets,
                                      const RcnnSampleConfig& config, std::mt19937_64& rng) {
  std::vector<int64_t> positives, negatives;
  for (size_t i = 0; i < targets.size(); ++i)
    (targets[i].p_star ? positives : negatives).push_back(static_cast<int64_t>(i));
  std::shuffle(positives.begin(), positives.end(), rng);
  std::shuffle(negatives.begin(), negatives.end(), rng);
  const int64_t max_pos = static_cast<int64_t>(config.sample_count * config.positive_fraction);
  if (static_cast<int64_t>(positives.size()) > max_pos) positives.resize(max_pos);
  const int64_t want_neg = config.sample_count - static_cast<int64_t>(positives.size());
  if (static_cast<int64_t>(negatives.size()) > want_neg)
    negatives.resize(std::max<int64_t>(want_neg, 0));
  std::vector<int64_t> out = positives;
  out.insert(out.end(), negatives.begin(), negatives.end());
  if (out.empty()) throw std::invalid_argument("sample_proposals: nothing to sample");
  return out;
}

StageLoss rcnn_loss(const RcnnOutputs& outputs, const std::vector<ProposalTarget>& targets,
                    double lambda, double smooth_l1_beta) {
  const int64_t n = outputs.logits->value.numel();
  if (n == 0) throw std::invalid_argument("rcnn_loss: zero proposals");
  if (targets.size() != static_cast<size_t>(n))
    throw std::invalid_argument("rcnn_loss: targets misaligned with proposals");

  Tensor cls_targets({n});
  Tensor ones = Tensor::full({n}, 1.0);
  Tensor loc_targets({n, 4});
  Tensor pos_gate({n});
  for (int64_t i = 0; i < n; ++i) {
    cls_targets[i] = targets[i].p_star;
    pos_gate[i] = targets[i].p_star;
    const BoxDelta& d = targets[i].target_delta;
    loc_targets.at(i, 0) = d.dx;
    loc_targets.at(i, 1) = d.dy;
    loc_targets.at(i, 2) = d.dw;
    loc_targets.at(i, 3) = d.dh;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  ad::Var cls = ad::scale(ad::bce_with_logits_sum(outputs.logits, cls_targets, ones), inv_n);
  ad::Var loc = ad::scale(
      ad::smooth_l1_sum(outputs.deltas, loc_targets, pos_gate, smooth_l1_beta), inv_n);

  StageLoss result;
  result.cls = cls->value.item();
  result.loc = loc->value.item();
  result.total = ad::add(cls, ad::scale(loc, lambda));
  return result;
}

std::vector<Prediction> final_predictions(const RcnnOutputs& outputs, double image_w,
                                          double image_h) {
  const int64_t n = outputs.logits->value.numel();
  std::vector<Prediction> preds;
  preds.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    BoxDelta d{outputs.deltas->value.at(i, 0), outputs.deltas->value.at(i, 1),
               outputs.deltas->value.at(i, 2), outputs.deltas->value.at(i, 3)};
    Prediction p;
    p.box = decode_delta(d, outputs.proposals[static_cast<size_t>(i)], {{image_w, image_h}});
    if (!p.box.valid()) {
      // Regression pushed the box fully outside; keep a minimal sliver at
      // the image border so cardinality and downstream geometry hold.
      const double eps = 1e-3;
      p.box.x1 = std::clamp(p.box.x1, 0.0, image_w - eps);
      p.box.y1 = std::clamp(p.box.y1, 0.0, image_h - eps);
      p.box.x2 = std::min(p.box.x1 + eps, image_w);
      p.box.y2 = std::min(p.box.y1 + eps, image_h);
      p.box.x1 = p.box.x2 - eps;
      p.box.y1 = p.box.y2 - eps;
    }
    p.score = 1.0 / (1.0 + std::exp(-outputs.logits->value[i]));
    p.delta = d;
    p.index = i;
    preds.push_back(p);
  }
  std::stable_sort(preds.begin(), preds.end(), [](const Prediction& a, const Prediction& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return preds;
}

}  // namespace gt
