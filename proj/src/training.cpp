#include "globaltrack/training.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "globaltrack/checkpoint.hpp"

namespace gt {

namespace {

// Per-query sampling seed derived from the instance boxes so the cross-query
// mean does not depend on the order the instances are visited in.
uint64_t instance_seed(uint64_t base, const InstancePair& inst) {
  uint64_t h = 1469598103934665603ull ^ base;
  auto mix = [&h](double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 1099511628211ull;
  };
  for (double v : {inst.query_box.x1, inst.query_box.y1, inst.query_box.x2, inst.query_box.y2,
                   inst.search_box.x1, inst.search_box.y1, inst.search_box.x2,
                   inst.search_box.y2})
    mix(v);
  return h;
}

Box scaled_box(const Box& b, double s) { return Box{b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s}; }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1 || epochs < 1 || iterations_per_epoch < 1)
    throw std::invalid_argument("train config: counts must be positive");
  if (learning_rate < 0 || momentum < 0 || weight_decay < 0 || decay_factor <= 0)
    throw std::invalid_argument("train config: negative optimizer constant");
  for (int64_t e : decay_epochs)
    if (e < 1 || e > epochs)
      throw std::invalid_argument("train config: decay milestone outside epoch range");
}

double learning_rate_at(const TrainConfig& config, int64_t epoch) {
  double lr = config.learning_rate;
  for (int64_t milestone : config.decay_epochs)
    if (epoch >= milestone) lr *= config.decay_factor;
  return lr;
}

LossBreakdown pair_loss(const GlobalTrackModel& model, const ad::Var& z,
                        const std::vector<FeatureLevel>& search_levels, const Box& groundtruth,
                        double image_w, double image_h, const TrainConfig& config,
                        std::mt19937_64& rng) {
  RpnOutputs rpn_out = model.rpn_forward(z, search_levels);
  const auto anchor_targets = assign_anchor_targets(rpn_out.anchors, groundtruth);
  RpnLossConfig rpn_cfg = config.rpn;
  rpn_cfg.lambda = config.lambda;
  StageLoss rpn = rpn_loss(rpn_out, anchor_targets, rpn_cfg, rng);

  std::vector<Box> boxes;
  for (const auto& p : propose(rpn_out, image_w, image_h, config.proposals))
    boxes.push_back(p.box);
  boxes.push_back(groundtruth.clipped(image_w, image_h));  // guarantees a positive
  const auto proposal_targets = assign_proposal_targets(boxes, groundtruth);
  const auto picked = sample_proposals(proposal_targets, config.rcnn_sample, rng);

  std::vector<Box> sampled_boxes;
  std::vector<ProposalTarget> sampled_targets;
  for (int64_t i : picked) {
    sampled_boxes.push_back(boxes[static_cast<size_t>(i)]);
    sampled_targets.push_back(proposal_targets[static_cast<size_t>(i)]);
  }
  RcnnOutputs rcnn_out =
      model.rcnn_forward(z, search_levels, sampled_boxes, image_w, image_h);
  StageLoss rcnn = rcnn_loss(rcnn_out, sampled_targets, config.lambda);

  LossBreakdown out;
  out.total = ad::add(rpn.total, rcnn.total);
  out.rpn_cls = rpn.cls;
  out.rpn_loc = rpn.loc;
  out.rcnn_cls = rcnn.cls;
  out.rcnn_loc = rcnn.loc;
  return out;
}

LossBreakdown cross_query_loss(const GlobalTrackModel& model, const PairSample& sample,
                               const TrainConfig& config, std::mt19937_64& rng) {
  if (sample.instances.empty()) throw std::invalid_argument("cross_query_loss: M = 0");

  const ResizedImage query = resize_normalize(sample.query_image, config.resize, config.normalize);
  const ResizedImage search =
      resize_normalize(sample.search_image, config.resize, config.normalize);
  const auto query_levels = model.extract_features(query.tensor);
  const auto search_levels = model.extract_features(search.tensor);

  const uint64_t base = rng();
  std::vector<ad::Var> totals;
  LossBreakdown out;
  for (const auto& inst : sample.instances) {
    std::mt19937_64 query_rng(instance_seed(base, inst));
    const ad::Var z = model.pool_query(query_levels, scaled_box(inst.query_box, query.scale),
                                       query.width, query.height);
    LossBreakdown one =
        pair_loss(model, z, search_levels, scaled_box(inst.search_box, search.scale),
                  search.width, search.height, config, query_rng);
    totals.push_back(one.total);
    out.rpn_cls += one.rpn_cls;
    out.rpn_loc += one.rpn_loc;
    out.rcnn_cls += one.rcnn_cls;
    out.rcnn_loc += one.rcnn_loc;
  }
  const double m = static_cast<double>(totals.size());
  ad::Var sum = totals[0];
  for (size_t k = 1; k < totals.size(); ++k) sum = ad::add(sum, totals[k]);
  out.total = ad::scale(sum, 1.0 / m);
  out.rpn_cls /= m;
  out.rpn_loc /= m;
  out.rcnn_cls /= m;
  out.rcnn_loc /= m;
  return out;
}

SgdOptimizer::SgdOptimizer(std::vector<ad::Var> parameters, double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& p : parameters)
    slots_.push_back({p, Tensor::zeros(p->value.shape())});
}

void SgdOptimizer::step(double learning_rate) {
  for (auto& slot : slots_) {
    Tensor& v = slot.velocity;
    const Tensor& grad = slot.param->grad;
    Tensor& value = slot.param->value;
    if (grad.numel() != value.numel())
      throw std::runtime_error("sgd: missing gradient for " + slot.param->name);
    for (int64_t i = 0; i < value.numel(); ++i) {
      v[i] = momentum_ * v[i] + grad[i] + weight_decay_ * value[i];
      value[i] -= learning_rate * v[i];
    }
  }
}

TrainResult train(GlobalTrackModel& model, const MixtureSpec& mixture, const TrainConfig& config,
                  const std::string& config_echo) {
  config.validate();
  mixture.validate();
  std::mt19937_64 rng(config.seed);
  SgdOptimizer optimizer(model.params().trainable(), config.momentum, config.weight_decay);

  std::ofstream metrics;
  if (!config.metrics_path.empty()) {
    metrics.open(config.metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("train: cannot open metrics log");
    metrics << "# globaltrack-metrics v1\n"
            << "# step epoch lr total rpn_cls rpn_loc rcnn_cls rcnn_loc\n";
  }
  if (!config.checkpoint_dir.empty())
    std::filesystem::create_directories(config.checkpoint_dir);

  TrainResult result;
  int64_t step = 0;
  for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    for (int64_t it = 0; it < config.iterations_per_epoch; ++it) {
      ++step;
      model.params().zero_grad();
      LossBreakdown mean;
      double total = 0;
      for (int64_t b = 0; b < config.batch_size; ++b) {
        const PairSample sample = sample_pair(mixture, config.augment, rng);
        LossBreakdown loss = cross_query_loss(model, sample, config, rng);
        if (!std::isfinite(loss.value())) {
          std::ostringstream what;
          what << "train: non-finite loss at step " << step << "; sample instances:";
          for (const auto& inst : sample.instances)
            what << " query[" << inst.query_box.x1 << "," << inst.query_box.y1 << ","
                 << inst.query_box.x2 << "," << inst.query_box.y2 << "] search["
                 << inst.search_box.x1 << "," << inst.search_box.y1 << "," << inst.search_box.x2
                 << "," << inst.search_box.y2 << "]";
          if (!config.checkpoint_dir.empty()) {
            cv::imwrite(config.checkpoint_dir + "/diagnostic_query.png", sample.query_image);
            cv::imwrite(config.checkpoint_dir + "/diagnostic_search.png", sample.search_image);
            what << "; images dumped to " << config.checkpoint_dir;
          }
          throw std::runtime_error(what.str());
        }
        ad::backward(ad::scale(loss.total, 1.0 / config.batch_size));
        total += loss.value() / config.batch_size;
        mean.rpn_cls += loss.rpn_cls / config.batch_size;
        mean.rpn_loc += loss.rpn_loc / config.batch_size;
        mean.rcnn_cls += loss.rcnn_cls / config.batch_size;
        mean.rcnn_loc += loss.rcnn_loc / config.batch_size;
      }
      // A parameter whose whole subgraph is inactive (e.g. a dead ReLU
      // layer) legitimately has zero gradient but no allocated tensor yet.
      for (const auto& p : model.params().trainable()) p->ensure_grad();
      optimizer.step(lr);
      result.step_losses.push_back(total);
      if (metrics.is_open()) {
        metrics << step << " " << epoch << " " << lr << " " << total << " " << mean.rpn_cls
                << " " << mean.rpn_loc << " " << mean.rcnn_cls << " " << mean.rcnn_loc << "\n";
        metrics.flush();
      }
    }
    if (!config.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "/epoch_%03d.ckpt", static_cast<int>(epoch));
      result.last_checkpoint = config.checkpoint_dir + name;
      CheckpointCodec::save(result.last_checkpoint, model.params(), config_echo);
    }
  }
  return result;
}

}  // namespace gt
