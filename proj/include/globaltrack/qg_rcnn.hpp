#pragma once

#include <random>
#include <vector>

#include "globaltrack/autodiff.hpp"
#include "globaltrack/geometry.hpp"
#include "globaltrack/qg_rpn.hpp"

namespace gt {

struct ProposalTarget {
  int p_star = 0;        // 1 when iou >= threshold
  BoxDelta target_delta; // meaningful only when positive
};

/// Second-stage raw outputs, aligned with the proposal list.
struct RcnnOutputs {
  ad::Var logits;            // [N]
  ad::Var deltas;            // [N, 4]
  std::vector<Box> proposals;
};

struct RcnnSampleConfig {
  int64_t sample_count = 512;
  double positive_fraction = 0.25;
};

// iou >= threshold (inclusive) -> positive with encoded delta target.
std::vector<ProposalTarget> assign_proposal_targets(const std::vector<Box>& proposals,
                                                    const Box& groundtruth,
                                                    double iou_threshold = 0.5);

// Indices of up to sample_count proposals with at most positive_fraction
// positives; preserves no particular order beyond the shuffled draw.
std::vector<int64_t> sample_proposals(const std::vector<ProposalTarget>& targets,
                                      const RcnnSampleConfig& config, std::mt19937_64& rng);

// (1/N_prop) sum_i [BCE(p_i, p_i*) + lambda p_i* smooth-L1(s_i, s_i*)].
// Throws on an empty proposal list.
StageLoss rcnn_loss(const RcnnOutputs& outputs, const std::vector<ProposalTarget>& targets,
                    double lambda, double smooth_l1_beta = 1.0);

// Final predictions: per-proposal score and refined box, score-descending,
// ties by lower proposal index.
std::vector<Prediction> final_predictions(const RcnnOutputs& outputs, double image_w,
                                          double image_h);

}  // namespace gt
