#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "globaltrack/geometry.hpp"
#include "globaltrack/tensor.hpp"

namespace gt::ad {

/// Node in a dynamically built reverse-mode graph. Ops return shared
/// handles; backward() walks the graph in reverse topological order.
class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated on first use, same shape as value
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
  void zero_grad();
};

using Var = std::shared_ptr<Node>;

// Graph leaf without gradient (inputs, targets, masks).
Var constant(Tensor value);
// Trainable leaf; gradients accumulate across backward() calls until
// zero_grad().
Var parameter(Tensor value, std::string name = "");

// Seeds root (must be scalar) with grad 1 and propagates.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);            // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);            // same shape, or b with batch dim 1 broadcast
Var scale(const Var& a, double c);
Var relu(const Var& a);
Var sigmoid(const Var& a);

// ---- shape ----
Var reshape(const Var& a, std::vector<int64_t> shape);
Var chw_to_hwc(const Var& a);                   // [N,C,H,W] -> [N,H,W,C]
Var crop2d(const Var& a, int64_t h, int64_t w); // top-left crop of [N,C,H,W]
Var upsample_nearest2x(const Var& a);
Var gather0(const Var& a, const std::vector<int64_t>& indices);  // rows of [N] or [N,D]
Var concat0(const std::vector<Var>& parts);     // along axis 0

// ---- reductions ----
Var sum(const Var& a);
Var mean(const Var& a);

// ---- layers ----
// x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] or nullptr.
Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad);
// x [N,In], w [Out,In], b [Out] or nullptr.
Var linear(const Var& x, const Var& w, const Var& b);
Var maxpool2d(const Var& x, int64_t kernel, int64_t stride, int64_t pad);
// x [N,C,H,W] scaled per channel by s [C] or [1,C]; the depth-wise 1x1 kernel.
Var channel_scale(const Var& x, const Var& s);
// Frozen-normalization affine: y[.,c,.,.] = x * gamma[c] + beta[c].
Var channel_affine(const Var& x, const Var& gamma, const Var& beta);

// ROI align over x [1,C,H,W]; boxes in input-image coordinates,
// spatial_scale = 1/stride. Bilinear, sampling_ratio^2 samples per cell,
// half-pixel aligned. Output [len(boxes), C, k, k].
Var roi_align(const Var& x, const std::vector<Box>& boxes, int64_t out_size,
              double spatial_scale, int64_t sampling_ratio = 2);

// ---- losses (summed; callers normalize) ----
// sum_i weight[i] * BCE(sigmoid(logit[i]), target[i]), numerically stable.
Var bce_with_logits_sum(const Var& logits, const Tensor& targets, const Tensor& weights);
// pred/target [N,4]; sum_i row_weight[i] * sum_j smooth_l1(pred-target; beta).
Var smooth_l1_sum(const Var& pred, const Tensor& targets, const Tensor& row_weights,
                  double beta = 1.0);

// Central finite-difference gradient of f with respect to leaf, for tests
// and the acceptance gradient suite.
Tensor finite_difference(const std::function<double()>& f, Tensor& leaf_value,
                         double eps = 1e-5);

}  // namespace gt::ad
