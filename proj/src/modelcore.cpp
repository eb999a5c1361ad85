#include "globaltrack/modelcore.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace gt {

using ad::Var;

ad::Var ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (by_name_.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter " + name);
  Var p = ad::parameter(std::move(init), name);
  params_.push_back(p);
  by_name_[name] = p;
  trainable_[name] = trainable;
  return p;
}

ad::Var ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return it->second;
}

std::vector<ad::Var> ParamStore::trainable() const {
  std::vector<Var> out;
  for (const auto& p : params_)
    if (trainable_.at(p->name)) out.push_back(p);
  return out;
}

void ParamStore::zero_grad() {
  for (const auto& p : params_) p->zero_grad();
}

uint64_t ParamStore::value_digest() const {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (const auto& p : params_)
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      uint64_t bits;
      const double v = p->value[i];
      std::memcpy(&bits, &v, sizeof bits);
      for (int s = 0; s < 64; s += 8) {
        h ^= (bits >> s) & 0xff;
        h *= 1099511628211ull;
      }
    }
  return h;
}

ConvLayer make_conv(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                    int64_t kernel, int64_t stride, int64_t pad, std::mt19937_64& rng) {
  const double a = std::sqrt(3.0 / static_cast<double>(in * kernel * kernel));
  ConvLayer layer;
  layer.w = ps.add(name + ".w", Tensor::uniform({out, in, kernel, kernel}, a, rng));
  layer.b = ps.add(name + ".b", Tensor::zeros({out}));
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

LinearLayer make_linear(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                        std::mt19937_64& rng) {
  const double a = std::sqrt(3.0 / static_cast<double>(in));
  LinearLayer layer;
  layer.w = ps.add(name + ".w", Tensor::uniform({out, in}, a, rng));
  layer.b = ps.add(name + ".b", Tensor::zeros({out}));
  return layer;
}

namespace {

void check_image(const ad::Var& image, int64_t stride) {
  const auto& s = image->value.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 3)
    throw std::invalid_argument("backbone: expected [1,3,H,W] image, got " +
                                image->value.shape_str());
  if (s[2] < stride || s[3] < stride)
    throw std::invalid_argument("backbone: image smaller than one stride");
}

class DeskBackbone : public Backbone {
 public:
  DeskBackbone(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng)
      : stride_(cfg.stride) {
    int64_t n_down = 0;
    for (int64_t s = cfg.stride; s > 1; s >>= 1) {
      if (s & 1) throw std::invalid_argument("desk backbone: stride must be a power of two");
      ++n_down;
    }
    int64_t in = 3;
    for (int64_t i = 0; i < n_down; ++i) {
      const int64_t out = i + 1 == n_down ? cfg.channels : std::min<int64_t>(cfg.channels, 8 << i);
      convs_.push_back(make_conv(ps, "backbone.conv" + std::to_string(i), in, out, 3, 2, 1, rng));
      in = out;
    }
  }

  std::vector<FeatureLevel> forward(const ad::Var& image) const override {
    check_image(image, stride_);
    Var x = image;
    for (size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i](x);
      if (i + 1 < convs_.size()) x = ad::relu(x);
    }
    return {{x, static_cast<double>(stride_)}};
  }

 private:
  std::vector<ConvLayer> convs_;
  int64_t stride_;
};

// Convolution with a frozen per-channel affine standing in for batch-norm.
struct ConvAffine {
  ConvLayer conv;
  Var gamma, beta;
  Var operator()(const Var& x) const { return ad::channel_affine(conv(x), gamma, beta); }
};

ConvAffine make_conv_affine(ParamStore& ps, const std::string& name, int64_t in, int64_t out,
                            int64_t kernel, int64_t stride, int64_t pad, std::mt19937_64& rng) {
  ConvAffine ca;
  ca.conv = make_conv(ps, name, in, out, kernel, stride, pad, rng);
  ca.gamma = ps.add(name + ".gamma", Tensor::full({out}, 1.0), /*trainable=*/false);
  ca.beta = ps.add(name + ".beta", Tensor::zeros({out}), /*trainable=*/false);
  return ca;
}

struct Bottleneck {
  ConvAffine reduce, spatial, expand;
  std::optional<ConvAffine> shortcut;

  Var operator()(const Var& x) const {
    Var y = ad::relu(reduce(x));
    y = ad::relu(spatial(y));
    y = expand(y);
    Var s = shortcut ? (*shortcut)(x) : x;
    return ad::relu(ad::add(y, s));
  }
};

class ResnetBackbone : public Backbone {
 public:
  ResnetBackbone(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng)
      : pyramid_(cfg.pyramid), channels_(cfg.channels) {
    stem_ = make_conv_affine(ps, "backbone.stem", 3, 64, 7, 2, 3, rng);
    const int64_t block_counts[4] = {3, 4, 6, 3};
    int64_t in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const int64_t mid = 64 << stage;
      const int64_t out = mid * 4;
      const int64_t stage_stride = stage == 0 ? 1 : 2;
      std::vector<Bottleneck> blocks;
      for (int64_t bi = 0; bi < block_counts[stage]; ++bi) {
        const std::string name =
            "backbone.s" + std::to_string(stage + 2) + ".b" + std::to_string(bi);
        Bottleneck blk;
        const int64_t s = bi == 0 ? stage_stride : 1;
        blk.reduce = make_conv_affine(ps, name + ".reduce", in, mid, 1, 1, 0, rng);
        blk.spatial = make_conv_affine(ps, name + ".spatial", mid, mid, 3, s, 1, rng);
        blk.expand = make_conv_affine(ps, name + ".expand", mid, out, 1, 1, 0, rng);
        if (bi == 0)
          blk.shortcut = make_conv_affine(ps, name + ".shortcut", in, out, 1, s, 0, rng);
        blocks.push_back(std::move(blk));
        in = out;
      }
      stages_.push_back(std::move(blocks));
    }
    if (pyramid_) {
      const int64_t dims[3] = {512, 1024, 2048};
      for (int i = 0; i < 3; ++i) {
        lateral_.push_back(
            make_conv(ps, "backbone.lateral" + std::to_string(i), dims[i], channels_, 1, 1, 0, rng));
        smooth_.push_back(
            make_conv(ps, "backbone.smooth" + std::to_string(i), channels_, channels_, 3, 1, 1, rng));
      }
    } else {
      lateral_.push_back(make_conv(ps, "backbone.lateral0", 1024, channels_, 1, 1, 0, rng));
    }
  }

  std::vector<FeatureLevel> forward(const ad::Var& image) const override {
    check_image(image, 32);
    Var x = ad::relu(stem_(image));
    x = ad::maxpool2d(x, 3, 2, 1);
    std::vector<Var> stage_out;
    for (const auto& stage : stages_) {
      for (const auto& blk : stage) x = blk(x);
      stage_out.push_back(x);
    }
    if (!pyramid_) return {{lateral_[0](stage_out[2]), 16.0}};

    // Top-down pyramid over C3..C5.
    Var p5 = lateral_[2](stage_out[3]);
    Var p4 = ad::add(lateral_[1](stage_out[2]),
                     ad::crop2d(ad::upsample_nearest2x(p5), stage_out[2]->value.dim(2),
                                stage_out[2]->value.dim(3)));
    Var p3 = ad::add(lateral_[0](stage_out[1]),
                     ad::crop2d(ad::upsample_nearest2x(p4), stage_out[1]->value.dim(2),
                                stage_out[1]->value.dim(3)));
    return {{smooth_[0](p3), 8.0}, {smooth_[1](p4), 16.0}, {smooth_[2](p5), 32.0}};
  }

 private:
  ConvAffine stem_;
  std::vector<std::vector<Bottleneck>> stages_;
  std::vector<ConvLayer> lateral_;
  std::vector<ConvLayer> smooth_;
  bool pyramid_;
  int64_t channels_;
};

}  // namespace

std::unique_ptr<Backbone> make_desk_backbone(ParamStore& ps, const ModelConfig& cfg,
                                             std::mt19937_64& rng) {
  return std::make_unique<DeskBackbone>(ps, cfg, rng);
}

std::unique_ptr<Backbone> make_resnet_backbone(ParamStore& ps, const ModelConfig& cfg,
                                               std::mt19937_64& rng) {
  return std::make_unique<ResnetBackbone>(ps, cfg, rng);
}

std::unique_ptr<Backbone> make_backbone(ParamStore& ps, const ModelConfig& cfg,
                                        std::mt19937_64& rng) {
  if (cfg.backbone == "desk") return make_desk_backbone(ps, cfg, rng);
  if (cfg.backbone == "resnet") return make_resnet_backbone(ps, cfg, rng);
  throw std::invalid_argument("unknown backbone: " + cfg.backbone);
}

ad::Var pool_roi(const FeatureLevel& level, const Box& box, int64_t roi_size,
                 double image_w, double image_h) {
  Box clipped = box.clipped(image_w, image_h);
  if (!clipped.valid())
    throw std::invalid_argument("pool_roi: box has no area inside the image");
  return ad::roi_align(level.map, {clipped}, roi_size, 1.0 / level.stride);
}

size_t roi_level_for_box(const std::vector<FeatureLevel>& levels, const Box& box) {
  if (levels.empty()) throw std::invalid_argument("roi_level_for_box: no levels");
  if (levels.size() == 1) return 0;
  const double scale = std::sqrt(std::max(box.area(), 1.0));
  size_t best = 0;
  double best_err = 1e300;
  for (size_t i = 0; i < levels.size(); ++i) {
    // Canonical assignment: a level of stride s owns boxes around 14*s px.
    const double err = std::abs(std::log2(scale / (14.0 * levels[i].stride)));
    if (err < best_err) { best_err = err; best = i; }
  }
  return best;
}

ad::Var RpnModulation::apply(const ad::Var& z, const ad::Var& x) const {
  Var projected = fx(x);
  Var kernel = fz(z);  // [1, c' or c'*c', 1, 1]
  if (kernel->value.dim(2) != 1 || kernel->value.dim(3) != 1)
    throw std::invalid_argument("rpn modulation: query ROI size does not match f_z kernel");
  Var modulated;
  if (grouped) {
    modulated = ad::channel_scale(projected, ad::reshape(kernel, {cprime}));
  } else {
    Var w = ad::reshape(kernel, {cprime, cprime, 1, 1});
    modulated = ad::conv2d(projected, w, nullptr, 1, 0);
  }
  return fout(modulated);
}

ad::Var RcnnModulation::apply(const ad::Var& z, const ad::Var& x_i) const {
  return hout(ad::mul(hx(x_i), hz(z)));
}

RpnModulation make_rpn_modulation(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  RpnModulation m;
  const int64_t c = cfg.channels, cp = cfg.cprime();
  m.grouped = cfg.grouped_correlation;
  m.cprime = cp;
  m.fx = make_conv(ps, "rpn_mod.fx", c, cp, 3, 1, 1, rng);
  m.fz = make_conv(ps, "rpn_mod.fz", c, m.grouped ? cp : cp * cp, cfg.roi_size, 1, 0, rng);
  m.fout = make_conv(ps, "rpn_mod.fout", cp, c, 1, 1, 0, rng);
  return m;
}

RcnnModulation make_rcnn_modulation(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  RcnnModulation m;
  const int64_t c = cfg.channels, cp = cfg.cprime();
  m.hx = make_conv(ps, "rcnn_mod.hx", c, cp, 3, 1, 1, rng);
  m.hz = make_conv(ps, "rcnn_mod.hz", c, cp, 3, 1, 1, rng);
  m.hout = make_conv(ps, "rcnn_mod.hout", cp, c, 1, 1, 0, rng);
  return m;
}

}  // namespace gt
