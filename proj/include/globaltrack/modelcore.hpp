#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "globaltrack/autodiff.hpp"
#include "globaltrack/geometry.hpp"
#include "globaltrack/tensor.hpp"

namespace gt {

struct ModelConfig {
  std::string backbone = "desk";  // "desk" | "resnet"
  int64_t channels = 256;         // c, backbone output channels
  int64_t proj_channels = 0;      // c', 0 means same as channels
  int64_t roi_size = 7;           // k
  int64_t stride = 16;            // single-level feature stride
  bool pyramid = false;           // multi-level features (resnet only)
  bool grouped_correlation = true;
  int64_t rcnn_hidden = 256;
  AnchorGridConfig anchors;       // scales split across levels when pyramid

  int64_t cprime() const { return proj_channels > 0 ? proj_channels : channels; }
};

/// Ordered registry of named trainable leaves; the unit of checkpointing
/// and SGD updates.
class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init, bool trainable = true);
  ad::Var find(const std::string& name) const;  // throws if missing
  const std::vector<ad::Var>& all() const { return params_; }
  std::vector<ad::Var> trainable() const;
  void zero_grad();
  // Order-insensitive content digest; used by the no-mutation tests.
  uint64_t value_digest() const;

 private:
  std::vector<ad::Var> params_;
  std::map<std::string, ad::Var> by_name_;
  std::map<std::string, bool> trainable_;
  friend struct CheckpointCodec;
};

struct ConvLayer {
  ad::Var w, b;
  int64_t stride = 1, pad = 0;
  ad::Var operator()(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }
};
struct LinearLayer {
  ad::Var w, b;
  ad::Var operator()(const ad::Var& x) const { return ad::linear(x, w, b); }
};

ConvLayer make_conv(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                    int64_t kernel, int64_t stride, int64_t pad, std::mt19937_64& rng);
LinearLayer make_linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                        std::mt19937_64& rng);

/// One backbone output level. stride is input pixels per feature cell.
struct FeatureLevel {
  ad::Var map;  // [1, C, h, w]
  double stride = 16;
};

class Backbone {
 public:
  virtual ~Backbone() = default;
  // image [1, 3, H, W], already resized and normalized.
  virtual std::vector<FeatureLevel> forward(const ad::Var& image) const = 0;
};

// Small stack of stride-2 convolutions; single level, trains from scratch.
std::unique_ptr<Backbone> make_desk_backbone(ParamStore& ps, const ModelConfig& cfg,
                                             std::mt19937_64& rng);
// ResNet-50-shaped bottleneck stack with frozen per-channel affines in
// place of batch-norm statistics. Single C4 level, or a 3-level pyramid
// (strides 8/16/32) when cfg.pyramid is set.
std::unique_ptr<Backbone> make_resnet_backbone(ParamStore& ps, const ModelConfig& cfg,
                                               std::mt19937_64& rng);
std::unique_ptr<Backbone> make_backbone(ParamStore& ps, const ModelConfig& cfg,
                                        std::mt19937_64& rng);

// ROI-align pooling of a box (input-image coordinates) into k x k x c.
// Throws on a box with no area left after clipping to the image.
ad::Var pool_roi(const FeatureLevel& level, const Box& box, int64_t roi_size,
                 double image_w, double image_h);

// Picks the pyramid level whose scale best matches sqrt(box area).
size_t roi_level_for_box(const std::vector<FeatureLevel>& levels, const Box& box);

/// Query-to-search-map modulation: fout(fx(x) modulated by the 1x1 kernel
/// fz makes of z). Output retains the shape of x.
struct RpnModulation {
  ConvLayer fx, fz, fout;
  bool grouped = true;
  int64_t cprime = 0;
  ad::Var apply(const ad::Var& z, const ad::Var& x) const;
};

/// Per-proposal modulation: hout(hx(x_i) Hadamard hz(z)). Output retains
/// the k x k x c shape of the proposal features.
struct RcnnModulation {
  ConvLayer hx, hz, hout;
  ad::Var apply(const ad::Var& z, const ad::Var& x_i) const;
};

RpnModulation make_rpn_modulation(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);
RcnnModulation make_rcnn_modulation(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);

}  // namespace gt
