#pragma once

#include <random>
#include <vector>

#include "globaltrack/autodiff.hpp"
#include "globaltrack/geometry.hpp"

namespace gt {

enum class AnchorLabel { negative = 0, positive = 1, ignore = 2 };

struct AnchorTarget {
  AnchorLabel label = AnchorLabel::ignore;
  BoxDelta target_delta;  // meaningful only when positive
};

struct RpnLossConfig {
  double lambda = 1.0;
  double smooth_l1_beta = 1.0;
  int64_t sample_count = 256;
  double positive_fraction = 0.5;
};

/// First-stage raw outputs, flattened across levels in anchor order.
struct RpnOutputs {
  ad::Var logits;           // [A]
  ad::Var deltas;           // [A, 4]
  std::vector<Box> anchors; // size A, aligned with rows
};

struct StageLoss {
  ad::Var total;
  double cls = 0, loc = 0;  // component values
};

struct ProposalConfig {
  int64_t pre_nms_topk = 2000;
  double nms_threshold = 0.7;
  int64_t max_proposals = 2000;
};

// Anchors with iou >= hi (or the max-iou anchor) are positive, iou <= lo
// negative, the rest ignored. Exactly one groundtruth per query.
std::vector<AnchorTarget> assign_anchor_targets(const std::vector<Box>& anchors,
                                                const Box& groundtruth,
                                                double hi_threshold = 0.7,
                                                double lo_threshold = 0.3);

// Samples up to sample_count anchors (positive_fraction positive at most),
// then evaluates (1/N_cls) sum BCE + lambda (1/N_loc) sum p* smooth-L1
// with N_cls = sampled count, N_loc = sampled positive count.
// Throws when nothing can be sampled.
StageLoss rpn_loss(const RpnOutputs& outputs, const std::vector<AnchorTarget>& targets,
                   const RpnLossConfig& config, std::mt19937_64& rng);

// Score, decode, clip, NMS-filter, truncate. Pure value computation.
std::vector<Prediction> propose(const RpnOutputs& outputs, double image_w, double image_h,
                                const ProposalConfig& config);

}  // namespace gt
