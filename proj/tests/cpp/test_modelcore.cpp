#include <doctest.h>

#include <cstdio>
#include <random>
#include <stdexcept>

#include "globaltrack/checkpoint.hpp"
#include "globaltrack/model.hpp"
#include "gradcheck.hpp"

using namespace gt;
using gt::testutil::check_gradient;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone = "desk";
  cfg.channels = 4;
  cfg.roi_size = 3;
  cfg.stride = 8;
  cfg.rcnn_hidden = 8;
  cfg.anchors.scales = {8, 16};
  cfg.anchors.ratios = {1.0};
  cfg.anchors.stride = 8;
  return cfg;
}

void fill(const ad::Var& v, double value) {
  for (int64_t i = 0; i < v->value.numel(); ++i) v->value[i] = value;
}

}  // namespace

TEST_CASE("desk backbone shapes and determinism") {
  ModelConfig cfg = tiny_config();
  GlobalTrackModel model(cfg, 42);

  std::mt19937_64 rng(5);
  Tensor image = Tensor::uniform({1, 3, 32, 40}, 1.0, rng);
  auto levels = model.extract_features(image);
  REQUIRE(levels.size() == 1);
  CHECK(levels[0].map->value.shape() == std::vector<int64_t>({1, 4, 4, 5}));
  CHECK(levels[0].stride == 8.0);

  // Bitwise-identical outputs for identical inputs.
  auto again = model.extract_features(image);
  for (int64_t i = 0; i < levels[0].map->value.numel(); ++i)
    CHECK(levels[0].map->value[i] == again[0].map->value[i]);

  // Doubling the input doubles each spatial dimension within one cell.
  Tensor big({1, 3, 64, 80});
  auto big_levels = model.extract_features(big);
  CHECK(std::abs(big_levels[0].map->value.dim(2) - 2 * levels[0].map->value.dim(2)) <= 1);
  CHECK(std::abs(big_levels[0].map->value.dim(3) - 2 * levels[0].map->value.dim(3)) <= 1);

  CHECK_THROWS_AS(model.extract_features(Tensor({1, 3, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(model.extract_features(Tensor({1, 1, 32, 32})), std::invalid_argument);
}

TEST_CASE("resnet-shaped backbone, single level and pyramid") {
  ModelConfig cfg;
  cfg.backbone = "resnet";
  cfg.channels = 8;
  cfg.roi_size = 3;
  GlobalTrackModel single(cfg, 1);
  Tensor image({1, 3, 64, 64});
  auto levels = single.extract_features(image);
  REQUIRE(levels.size() == 1);
  CHECK(levels[0].stride == 16.0);
  CHECK(levels[0].map->value.shape() == std::vector<int64_t>({1, 8, 4, 4}));

  cfg.pyramid = true;
  cfg.anchors.scales = {16, 32, 64};
  GlobalTrackModel pyr(cfg, 1);
  auto pls = pyr.extract_features(image);
  REQUIRE(pls.size() == 3);
  CHECK(pls[0].stride == 8.0);
  CHECK(pls[1].stride == 16.0);
  CHECK(pls[2].stride == 32.0);
  CHECK(pls[0].map->value.dim(2) == 8);
  CHECK(pls[2].map->value.dim(2) == 2);
  for (const auto& l : pls) CHECK(l.map->value.dim(1) == 8);
}

TEST_CASE("pool_roi clipping and level selection") {
  FeatureLevel level{ad::constant(Tensor::full({1, 2, 8, 8}, 3.0)), 4.0};
  auto pooled = pool_roi(level, Box{5, 5, 21, 21}, 3, 32, 32);
  CHECK(pooled->value.shape() == std::vector<int64_t>({1, 2, 3, 3}));
  for (int64_t i = 0; i < pooled->value.numel(); ++i)
    CHECK(pooled->value[i] == doctest::Approx(3.0));

  // Box fully outside the image clips to nothing.
  CHECK_THROWS_AS(pool_roi(level, Box{-20, -20, -4, -4}, 3, 32, 32), std::invalid_argument);

  std::vector<FeatureLevel> levels{
      {ad::constant(Tensor({1, 1, 8, 8})), 8.0},
      {ad::constant(Tensor({1, 1, 4, 4})), 16.0},
      {ad::constant(Tensor({1, 1, 2, 2})), 32.0}};
  CHECK(roi_level_for_box(levels, Box{0, 0, 64, 64}) == 0);
  CHECK(roi_level_for_box(levels, Box{0, 0, 1000, 1000}) == 2);
}

TEST_CASE("rpn modulation hand-computed example") {
  ModelConfig cfg;
  cfg.backbone = "desk";
  cfg.channels = 1;
  cfg.roi_size = 1;
  cfg.stride = 2;
  std::mt19937_64 rng(0);
  ParamStore ps;
  RpnModulation mod = make_rpn_modulation(ps, cfg, rng);
  fill(mod.fx.w, 1.0);
  fill(mod.fz.w, 1.0);
  fill(mod.fout.w, 1.0);

  auto z = ad::constant(Tensor({1, 1, 1, 1}, {2.0}));
  auto x = ad::constant(Tensor({1, 1, 2, 2}, {1, 3, 5, 7}));
  auto out = mod.apply(z, x);
  REQUIRE(out->value.shape() == std::vector<int64_t>({1, 1, 2, 2}));
  for (int64_t i = 0; i < 4; ++i) CHECK(out->value[i] == doctest::Approx(32.0));

  // Zero query with zero biases annihilates the output.
  auto zero = mod.apply(ad::constant(Tensor({1, 1, 1, 1})), x);
  for (int64_t i = 0; i < 4; ++i) CHECK(zero->value[i] == doctest::Approx(0.0));
}

TEST_CASE("rcnn modulation hand-computed example") {
  ModelConfig cfg;
  cfg.channels = 1;
  cfg.roi_size = 1;
  std::mt19937_64 rng(0);
  ParamStore ps;
  RcnnModulation mod = make_rcnn_modulation(ps, cfg, rng);
  fill(mod.hx.w, 1.0);
  fill(mod.hz.w, 1.0);
  fill(mod.hout.w, 1.0);

  auto z = ad::constant(Tensor({1, 1, 1, 1}, {3.0}));
  auto xi = ad::constant(Tensor({1, 1, 1, 1}, {4.0}));
  auto out = mod.apply(z, xi);
  CHECK(out->value.numel() == 1);
  CHECK(out->value[0] == doctest::Approx(12.0));

  CHECK(mod.apply(ad::constant(Tensor({1, 1, 1, 1})), xi)->value[0] == doctest::Approx(0.0));

  // Shared weights make the pre-hout product symmetric in (z, x_i).
  auto swapped = mod.apply(xi, z);
  CHECK(swapped->value[0] == doctest::Approx(out->value[0]));
}

TEST_CASE("modulation shape contracts and query linearity") {
  std::mt19937_64 rng(9);
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.roi_size = 3;
  ParamStore ps;
  RpnModulation rm = make_rpn_modulation(ps, cfg, rng);
  RcnnModulation cm = make_rcnn_modulation(ps, cfg, rng);

  for (int trial = 0; trial < 8; ++trial) {
    const int64_t h = 2 + static_cast<int64_t>(rng() % 6);
    const int64_t w = 2 + static_cast<int64_t>(rng() % 6);
    auto x = ad::constant(Tensor::uniform({1, 3, h, w}, 1.0, rng));
    auto z = ad::constant(Tensor::uniform({1, 3, 3, 3}, 1.0, rng));
    CHECK(rm.apply(z, x)->value.shape() == x->value.shape());
    auto xi = ad::constant(Tensor::uniform({4, 3, 3, 3}, 1.0, rng));
    CHECK(cm.apply(z, xi)->value.shape() == xi->value.shape());
  }

  // With zero biases both operators are linear in z.
  for (const auto& p : ps.all())
    if (p->name.ends_with(".b")) fill(p, 0.0);
  auto x = ad::constant(Tensor::uniform({1, 3, 4, 4}, 1.0, rng));
  Tensor zt = Tensor::uniform({1, 3, 3, 3}, 1.0, rng);
  Tensor zt2 = zt;
  for (int64_t i = 0; i < zt2.numel(); ++i) zt2[i] *= 2.5;
  auto out1 = rm.apply(ad::constant(zt), x);
  auto out2 = rm.apply(ad::constant(zt2), x);
  for (int64_t i = 0; i < out1->value.numel(); ++i)
    CHECK(out2->value[i] == doctest::Approx(2.5 * out1->value[i]));
}

TEST_CASE("full (ungrouped) correlation preserves shape") {
  std::mt19937_64 rng(3);
  ModelConfig cfg;
  cfg.channels = 3;
  cfg.roi_size = 3;
  cfg.grouped_correlation = false;
  ParamStore ps;
  RpnModulation rm = make_rpn_modulation(ps, cfg, rng);
  auto x = ad::constant(Tensor::uniform({1, 3, 5, 4}, 1.0, rng));
  auto z = ad::constant(Tensor::uniform({1, 3, 3, 3}, 1.0, rng));
  CHECK(rm.apply(z, x)->value.shape() == x->value.shape());
}

TEST_CASE("modulation gradients match finite differences") {
  std::mt19937_64 rng(21);
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.roi_size = 2;
  ParamStore ps;
  RpnModulation rm = make_rpn_modulation(ps, cfg, rng);
  RcnnModulation cm = make_rcnn_modulation(ps, cfg, rng);

  auto z = ad::parameter(Tensor::uniform({1, 2, 2, 2}, 1.0, rng), "z");
  auto x = ad::parameter(Tensor::uniform({1, 2, 4, 3}, 1.0, rng), "x");
  auto xi = ad::parameter(Tensor::uniform({3, 2, 2, 2}, 1.0, rng), "xi");

  auto rpn_loss_fn = [&] { return ad::sum(ad::mul(rm.apply(z, x), rm.apply(z, x))); };
  CHECK(check_gradient(rpn_loss_fn, z) < 1e-4);
  CHECK(check_gradient(rpn_loss_fn, x) < 1e-4);
  CHECK(check_gradient(rpn_loss_fn, rm.fz.w) < 1e-4);
  CHECK(check_gradient(rpn_loss_fn, rm.fx.w) < 1e-4);
  CHECK(check_gradient(rpn_loss_fn, rm.fout.b) < 1e-4);

  auto rcnn_loss_fn = [&] { return ad::sum(ad::mul(cm.apply(z, xi), cm.apply(z, xi))); };
  CHECK(check_gradient(rcnn_loss_fn, z) < 1e-4);
  CHECK(check_gradient(rcnn_loss_fn, xi) < 1e-4);
  CHECK(check_gradient(rcnn_loss_fn, cm.hz.w) < 1e-4);
  CHECK(check_gradient(rcnn_loss_fn, cm.hout.w) < 1e-4);
}

TEST_CASE("checkpoint round trip and mismatch detection") {
  ModelConfig cfg = tiny_config();
  GlobalTrackModel a(cfg, 7);
  const std::string path = "test_ckpt.bin";
  CheckpointCodec::save(path, a.params(), "model.backbone=desk");

  GlobalTrackModel b(cfg, 8);
  CheckpointCodec::load(path, b.params());
  for (size_t i = 0; i < a.params().all().size(); ++i) {
    const auto& pa = a.params().all()[i];
    const auto& pb = b.params().all()[i];
    for (int64_t j = 0; j < pa->value.numel(); ++j)
      CHECK(pb->value[j] == doctest::Approx(pa->value[j]).epsilon(1e-6));
  }
  CHECK(CheckpointCodec::read_config_echo(path) == "model.backbone=desk");

  // Shape mismatch (different config) is rejected.
  ModelConfig other = tiny_config();
  other.channels = 8;
  GlobalTrackModel c(other, 7);
  CHECK_THROWS_AS(CheckpointCodec::load(path, c.params()), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("model forward: stages fit together") {
  ModelConfig cfg = tiny_config();
  GlobalTrackModel model(cfg, 3);
  std::mt19937_64 rng(12);
  Tensor image = Tensor::uniform({1, 3, 32, 32}, 1.0, rng);
  auto levels = model.extract_features(image);

  Box query{8, 8, 24, 24};
  auto z = model.pool_query(levels, query, 32, 32);
  CHECK(z->value.shape() == std::vector<int64_t>({1, 4, 3, 3}));

  auto rpn = model.rpn_forward(z, levels);
  CHECK(rpn.logits->value.numel() == 4 * 4 * 2);
  CHECK(rpn.anchors.size() == 4 * 4 * 2);
  CHECK(rpn.deltas->value.shape() == std::vector<int64_t>({32, 4}));

  ProposalConfig pc;
  pc.max_proposals = 5;
  auto proposals = propose(rpn, 32, 32, pc);
  CHECK(proposals.size() <= 5);
  REQUIRE(!proposals.empty());
  for (const auto& p : proposals) {
    CHECK(p.box.x1 >= 0);
    CHECK(p.box.y2 <= 32);
  }

  std::vector<Box> boxes;
  for (const auto& p : proposals) boxes.push_back(p.box);
  auto preds = model.classify_and_refine(z, levels, boxes, 32, 32);
  CHECK(preds.size() == boxes.size());
  for (size_t i = 0; i + 1 < preds.size(); ++i) CHECK(preds[i].score >= preds[i + 1].score);

  // Duplicated proposal yields identical duplicated predictions.
  std::vector<Box> dup{boxes[0], boxes[0]};
  auto dpreds = model.classify_and_refine(z, levels, dup, 32, 32);
  CHECK(dpreds[0].score == doctest::Approx(dpreds[1].score));
  CHECK(dpreds[0].box.x1 == doctest::Approx(dpreds[1].box.x1));

  CHECK_THROWS_AS(model.rcnn_forward(z, levels, {}, 32, 32), std::invalid_argument);
}
