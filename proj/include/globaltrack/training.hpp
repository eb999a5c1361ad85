#pragma once

#include <random>
#include <string>
#include <vector>

#include "globaltrack/data.hpp"
#include "globaltrack/model.hpp"
#include "globaltrack/qg_rcnn.hpp"
#include "globaltrack/qg_rpn.hpp"

namespace gt {

struct TrainConfig {
  int64_t batch_size = 4;  // pairs per optimization step
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int64_t epochs = 12;
  int64_t iterations_per_epoch = 1000;
  double learning_rate = 0.01;
  double decay_factor = 0.1;
  std::vector<int64_t> decay_epochs{8, 11};  // 1-based, lr decays from these on
  double lambda = 1.0;  // shared localization weight for both stages

  RpnLossConfig rpn;          // sampling counts; lambda is overridden by `lambda`
  RcnnSampleConfig rcnn_sample;
  ProposalConfig proposals;
  ResizeSpec resize;
  NormalizeSpec normalize;
  AugmentSpec augment;

  uint64_t seed = 0;
  std::string checkpoint_dir;  // empty disables checkpointing
  std::string metrics_path;    // empty disables the metrics log

  void validate() const;  // throws std::invalid_argument on bad milestones etc.
};

// Learning rate for a 1-based epoch: base * factor^(milestones reached).
double learning_rate_at(const TrainConfig& config, int64_t epoch);

struct LossBreakdown {
  ad::Var total;
  double rpn_cls = 0, rpn_loc = 0, rcnn_cls = 0, rcnn_loc = 0;
  double value() const { return total->value.item(); }
};

// Single-query loss: first-stage loss plus second-stage loss on proposals
// from the current first stage (the groundtruth box is appended to the
// proposal set so positives always exist). Features are precomputed by the
// caller so several queries can share them.
LossBreakdown pair_loss(const GlobalTrackModel& model, const ad::Var& z,
                        const std::vector<FeatureLevel>& search_levels, const Box& groundtruth,
                        double image_w, double image_h, const TrainConfig& config,
                        std::mt19937_64& rng);

// Mean of pair_loss over the M co-present instances with one backbone pass
// per image. Per-query sampling streams are seeded from the instance boxes,
// making the value invariant to instance permutation.
LossBreakdown cross_query_loss(const GlobalTrackModel& model, const PairSample& sample,
                               const TrainConfig& config, std::mt19937_64& rng);

/// SGD with momentum; weight decay enters through the gradient, so a zero
/// learning-rate step is a bitwise no-op on the parameters.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<ad::Var> parameters, double momentum, double weight_decay);
  void step(double learning_rate);

 private:
  struct Slot {
    ad::Var param;
    Tensor velocity;
  };
  std::vector<Slot> slots_;
  double momentum_, weight_decay_;
};

struct TrainResult {
  std::vector<double> step_losses;  // batch-mean total per optimization step
  std::string last_checkpoint;      // empty when checkpointing disabled
};

// Full driver: per-step metrics logging, epoch-boundary checkpoints,
// deterministic under config.seed, aborts on a non-finite loss with a
// diagnostic dump of the offending sample.
TrainResult train(GlobalTrackModel& model, const MixtureSpec& mixture, const TrainConfig& config,
                  const std::string& config_echo = "");

}  // namespace gt
