#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "globaltrack/modelcore.hpp"
#include "globaltrack/qg_rcnn.hpp"
#include "globaltrack/qg_rpn.hpp"

namespace gt {

struct RpnHead {
  ConvLayer shared, cls, reg;
  int64_t anchors_per_cell = 0;
};

struct RcnnHead {
  LinearLayer fc1, fc2, cls, reg;
};

/// The full two-stage model: backbone, query-guided modulation and heads
/// for both stages. Parameters are immutable during inference.
class GlobalTrackModel {
 public:
  GlobalTrackModel(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Backbone pass on a normalized [1,3,H,W] image.
  std::vector<FeatureLevel> extract_features(const Tensor& image) const;

  // Query ROI feature z, pooled from the level matching the box scale.
  ad::Var pool_query(const std::vector<FeatureLevel>& levels, const Box& box,
                     double image_w, double image_h) const;

  // Stage 1: modulate every level with z, run the RPN head, flatten.
  RpnOutputs rpn_forward(const ad::Var& z, const std::vector<FeatureLevel>& levels) const;

  // Stage 2: pool each proposal, modulate against z, run the RCNN head.
  RcnnOutputs rcnn_forward(const ad::Var& z, const std::vector<FeatureLevel>& levels,
                           const std::vector<Box>& proposals, double image_w,
                           double image_h) const;

  // Convenience: stage-1 proposals followed by stage-2 predictions.
  std::vector<Prediction> classify_and_refine(const ad::Var& z,
                                              const std::vector<FeatureLevel>& levels,
                                              const std::vector<Box>& proposals,
                                              double image_w, double image_h) const;

  const AnchorGridConfig& anchor_config(size_t level) const;

 private:
  ModelConfig config_;
  ParamStore params_;
  std::unique_ptr<Backbone> backbone_;
  RpnModulation rpn_mod_;
  RcnnModulation rcnn_mod_;
  RpnHead rpn_head_;
  RcnnHead rcnn_head_;
  std::vector<AnchorGridConfig> level_anchors_;
};

}  // namespace gt
