#include <doctest.h>

#include <cmath>
#include <random>

#include "globaltrack/autodiff.hpp"
#include "gradcheck.hpp"

using namespace gt;
using namespace gt::ad;
using gt::testutil::check_gradient;

namespace {
std::mt19937_64 rng(1234);
Var rand_param(std::vector<int64_t> shape, std::string name = "p") {
  return parameter(Tensor::uniform(std::move(shape), 1.0, rng), std::move(name));
}
}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  t.at(1, 2) = 5.0;
  CHECK(t.reshaped({6})[5] == 5.0);
  CHECK_THROWS_AS(t.reshaped({4}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("elementwise op gradients") {
  auto a = rand_param({3, 4});
  auto b = rand_param({3, 4});
  CHECK(check_gradient([&] { return sum(mul(add(a, b), sub(a, b))); }, a) < 1e-6);
  CHECK(check_gradient([&] { return sum(relu(sub(a, b))); }, b, 1e-6) < 1e-4);
  CHECK(check_gradient([&] { return mean(sigmoid(a)); }, a) < 1e-6);
  CHECK(check_gradient([&] { return scale(sum(a), 2.5); }, a) < 1e-6);
}

TEST_CASE("broadcast mul over batch axis") {
  auto x = rand_param({4, 2, 3, 3});
  auto z = rand_param({1, 2, 3, 3});
  auto out = mul(x, z);
  CHECK(out->value.shape() == std::vector<int64_t>({4, 2, 3, 3}));
  CHECK(out->value.at(3, 1, 2, 2) ==
        doctest::Approx(x->value.at(3, 1, 2, 2) * z->value.at(0, 1, 2, 2)));
  CHECK(check_gradient([&] { return sum(mul(x, z)); }, z) < 1e-6);
  CHECK(check_gradient([&] { return sum(mul(x, z)); }, x) < 1e-6);
}

TEST_CASE("conv2d values and gradients") {
  // 3x3 all-ones kernel over a 2x2 all-one input with pad 1: center taps.
  auto x = parameter(Tensor::full({1, 1, 2, 2}, 1.0));
  auto w = parameter(Tensor::full({1, 1, 3, 3}, 1.0));
  auto y = conv2d(x, w, nullptr, 1, 1);
  CHECK(y->value.shape() == std::vector<int64_t>({1, 1, 2, 2}));
  for (int64_t i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(4.0));

  auto xr = rand_param({2, 3, 5, 4});
  auto wr = rand_param({4, 3, 3, 3});
  auto br = rand_param({4});
  CHECK(check_gradient([&] { return sum(conv2d(xr, wr, br, 1, 1)); }, xr) < 1e-6);
  CHECK(check_gradient([&] { return sum(conv2d(xr, wr, br, 1, 1)); }, wr) < 1e-6);
  CHECK(check_gradient([&] { return sum(conv2d(xr, wr, br, 1, 1)); }, br) < 1e-6);
  // Strided.
  CHECK(check_gradient([&] { return sum(conv2d(xr, wr, br, 2, 1)); }, xr) < 1e-6);
  CHECK(check_gradient([&] { return mean(relu(conv2d(xr, wr, br, 2, 1))); }, wr) < 1e-5);

  CHECK_THROWS_AS(conv2d(xr, rand_param({4, 2, 3, 3}), nullptr, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("linear gradients") {
  auto x = rand_param({3, 5});
  auto w = rand_param({2, 5});
  auto b = rand_param({2});
  CHECK(check_gradient([&] { return sum(linear(x, w, b)); }, x) < 1e-6);
  CHECK(check_gradient([&] { return sum(linear(x, w, b)); }, w) < 1e-6);
  CHECK(check_gradient([&] { return sum(linear(x, w, b)); }, b) < 1e-6);
}

TEST_CASE("channel scale and affine") {
  auto x = rand_param({2, 3, 4, 4});
  auto s = rand_param({3});
  auto g = rand_param({3});
  auto be = rand_param({3});
  auto y = channel_scale(x, s);
  CHECK(y->value.at(1, 2, 0, 0) == doctest::Approx(x->value.at(1, 2, 0, 0) * s->value[2]));
  CHECK(check_gradient([&] { return sum(channel_scale(x, s)); }, s) < 1e-6);
  CHECK(check_gradient([&] { return sum(channel_scale(x, s)); }, x) < 1e-6);
  CHECK(check_gradient([&] { return sum(channel_affine(x, g, be)); }, g) < 1e-6);
  CHECK(check_gradient([&] { return sum(channel_affine(x, g, be)); }, be) < 1e-6);
}

TEST_CASE("shape ops") {
  auto x = rand_param({2, 3, 4, 5});
  auto t = chw_to_hwc(x);
  CHECK(t->value.shape() == std::vector<int64_t>({2, 4, 5, 3}));
  CHECK(t->value[((0 * 4 + 1) * 5 + 2) * 3 + 1] == doctest::Approx(x->value.at(0, 1, 1, 2)));
  CHECK(check_gradient([&] { return sum(mul(chw_to_hwc(x), chw_to_hwc(x))); }, x) < 1e-6);

  CHECK(check_gradient([&] { return sum(crop2d(upsample_nearest2x(x), 5, 7)); }, x) < 1e-6);

  auto v = rand_param({6, 2});
  std::vector<int64_t> idx{4, 0, 4};
  auto gth = gather0(v, idx);
  CHECK(gth->value.shape() == std::vector<int64_t>({3, 2}));
  CHECK(gth->value.at(2, 1) == doctest::Approx(v->value.at(4, 1)));
  CHECK(check_gradient([&] { return sum(mul(gather0(v, idx), gather0(v, idx))); }, v) < 1e-6);

  auto c = concat0({v, v});
  CHECK(c->value.dim(0) == 12);
  CHECK(check_gradient([&] { return sum(mul(concat0({v, v}), concat0({v, v}))); }, v) < 1e-6);
}

TEST_CASE("roi_align values") {
  // 2x2 map [[1,2],[3,4]], full-image box, 1x1 output -> bilinear center 2.5.
  auto x = parameter(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  auto pooled = roi_align(x, {Box{0, 0, 2, 2}}, 1, 1.0, 2);
  CHECK(pooled->value.numel() == 1);
  CHECK(pooled->value[0] == doctest::Approx(2.5));

  // Constant map stays constant regardless of box and output size.
  auto cmap = parameter(Tensor::full({1, 3, 6, 6}, 7.5));
  auto cp = roi_align(cmap, {Box{3.3, 0.5, 14.2, 9.9}, Box{0, 0, 24, 24}}, 4, 0.25, 2);
  CHECK(cp->value.shape() == std::vector<int64_t>({2, 3, 4, 4}));
  for (int64_t i = 0; i < cp->value.numel(); ++i)
    CHECK(cp->value[i] == doctest::Approx(7.5));

  CHECK_THROWS_AS(roi_align(cmap, {Box{5, 5, 5, 9}}, 4, 0.25), std::invalid_argument);
}

TEST_CASE("roi_align linearity and gradient") {
  auto x = rand_param({1, 2, 6, 5});
  std::vector<Box> boxes{{1.5, 2.0, 9.0, 11.0}, {0, 0, 20, 24}};
  CHECK(check_gradient([&] { return sum(mul(roi_align(x, boxes, 3, 0.25),
                                            roi_align(x, boxes, 3, 0.25))); }, x) < 1e-6);

  // Linearity in the map values.
  auto y1 = roi_align(x, boxes, 3, 0.25);
  auto x2 = parameter([&] { Tensor t = x->value; for (int64_t i = 0; i < t.numel(); ++i) t[i] *= 3.0; return t; }());
  auto y2 = roi_align(x2, boxes, 3, 0.25);
  for (int64_t i = 0; i < y1->value.numel(); ++i)
    CHECK(y2->value[i] == doctest::Approx(3.0 * y1->value[i]));
}

TEST_CASE("loss op values and gradients") {
  // -ln 0.5 at logit 0, target 1.
  auto l = parameter(Tensor({1}, {0.0}));
  auto bce = bce_with_logits_sum(l, Tensor({1}, {1.0}), Tensor({1}, {1.0}));
  CHECK(bce->value.item() == doctest::Approx(std::log(2.0)));

  auto logits = rand_param({6});
  Tensor targets({6}, {1, 0, 1, 0, 1, 1});
  Tensor weights({6}, {1, 1, 0, 1, 1, 0.5});
  CHECK(check_gradient([&] { return bce_with_logits_sum(logits, targets, weights); },
                       logits) < 1e-6);

  // Four coordinates off by 0.5 in the quadratic branch: 4 * 0.125 = 0.5.
  auto pred = parameter(Tensor({1, 4}, {0.5, 0.5, 0.5, 0.5}));
  auto sl = smooth_l1_sum(pred, Tensor({1, 4}), Tensor({1}, {1.0}));
  CHECK(sl->value.item() == doctest::Approx(0.5));
  // Linear branch: |d| - 0.5.
  auto pred2 = parameter(Tensor({1, 4}, {2.0, 0, 0, 0}));
  CHECK(smooth_l1_sum(pred2, Tensor({1, 4}), Tensor({1}, {1.0}))->value.item() ==
        doctest::Approx(1.5));

  auto p = rand_param({5, 4});
  Tensor t = Tensor::uniform({5, 4}, 1.0, rng);
  Tensor w({5}, {1, 0, 1, 1, 0.25});
  CHECK(check_gradient([&] { return smooth_l1_sum(p, t, w); }, p) < 1e-5);
}

TEST_CASE("gradient accumulation and zero_grad") {
  auto a = rand_param({3});
  backward(sum(mul(a, a)));
  Tensor g1 = a->grad;
  backward(sum(mul(a, a)));
  CHECK(a->grad[0] == doctest::Approx(2 * g1[0]));
  a->zero_grad();
  CHECK_FALSE(a->grad.same_shape(a->value));
}
