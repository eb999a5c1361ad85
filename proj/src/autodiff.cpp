#include "globaltrack/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

namespace gt::ad {

Tensor& Node::ensure_grad() {
  if (grad.numel() != value.numel() || !grad.same_shape(value))
    grad = Tensor::zeros(value.shape());
  return grad;
}

void Node::zero_grad() { grad = Tensor(); }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value, std::string name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->name = std::move(name);
  return n;
}

namespace {

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(back);
  }
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* who) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                a->value.shape_str() + " vs " + b->value.shape_str());
}

}  // namespace

void backward(const Var& root) {
  if (!root->value.scalar_like())
    throw std::logic_error("backward: root must be scalar");
  if (!root->requires_grad) return;

  // Iterative post-order DFS for a reverse topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    // A node can reach this point with no gradient deposited (all of its
    // consumers contributed zero elements, e.g. an empty gather); its
    // backward function still expects an allocated, zero grad.
    n->ensure_grad();
    n->backward_fn(*n);
  }
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (a->requires_grad) a->ensure_grad()[i] += n.grad[i];
      if (b->requires_grad) b->ensure_grad()[i] += n.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make_op(std::move(out), {a, b}, [a, b](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (a->requires_grad) a->ensure_grad()[i] += n.grad[i];
      if (b->requires_grad) b->ensure_grad()[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  const bool bcast = !a->value.same_shape(b->value);
  int64_t inner = b->value.numel();
  if (bcast) {
    // b broadcast along the batch axis: b dim0 == 1, trailing dims match.
    if (a->value.ndim() != b->value.ndim() || b->value.dim(0) != 1 ||
        a->value.numel() % inner != 0)
      check_same_shape(a, b, "mul");
    for (size_t i = 1; i < a->value.ndim(); ++i)
      if (a->value.dim(i) != b->value.dim(i)) check_same_shape(a, b, "mul");
  }
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i % inner];
  return make_op(std::move(out), {a, b}, [a, b, inner](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (a->requires_grad) a->ensure_grad()[i] += n.grad[i] * b->value[i % inner];
      if (b->requires_grad) b->ensure_grad()[i % inner] += n.grad[i] * a->value[i];
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make_op(std::move(out), {a}, [a, c](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i) a->ensure_grad()[i] += c * n.grad[i];
  });
}

Var relu(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
  return make_op(std::move(out), {a}, [a](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i)
      if (a->value[i] > 0) a->ensure_grad()[i] += n.grad[i];
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor saved = out;
  return make_op(std::move(out), {a}, [a, saved](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i)
      a->ensure_grad()[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
  Tensor out = a->value.reshaped(shape);
  return make_op(std::move(out), {a}, [a](Node& n) {
    for (int64_t i = 0; i < n.value.numel(); ++i) a->ensure_grad()[i] += n.grad[i];
  });
}

Var chw_to_hwc(const Var& a) {
  const auto& s = a->value.shape();
  if (s.size() != 4) throw std::invalid_argument("chw_to_hwc: need rank-4 input");
  const int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor out({N, H, W, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
          out[((n * H + y) * W + x) * C + c] = a->value.at(n, c, y, x);
  return make_op(std::move(out), {a}, [a, N, C, H, W](Node& n_) {
    Tensor& g = a->ensure_grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < H; ++y)
          for (int64_t x = 0; x < W; ++x)
            g[((n * C + c) * H + y) * W + x] += n_.grad[((n * H + y) * W + x) * C + c];
  });
}

Var crop2d(const Var& a, int64_t h, int64_t w) {
  const auto& s = a->value.shape();
  if (s.size() != 4 || h > s[2] || w > s[3])
    throw std::invalid_argument("crop2d: bad target size");
  const int64_t N = s[0], C = s[1];
  Tensor out({N, C, h, w});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) out.at(n, c, y, x) = a->value.at(n, c, y, x);
  return make_op(std::move(out), {a}, [a, N, C, h, w](Node& n_) {
    Tensor& g = a->ensure_grad();
    const int64_t H = a->value.dim(2), W = a->value.dim(3);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x)
            g[((n * C + c) * H + y) * W + x] += n_.grad.at(n, c, y, x);
  });
}

Var upsample_nearest2x(const Var& a) {
  const auto& s = a->value.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample_nearest2x: need rank-4 input");
  const int64_t N = s[0], C = s[1], H = s[2], W = s[3];
  Tensor out({N, C, 2 * H, 2 * W});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < 2 * H; ++y)
        for (int64_t x = 0; x < 2 * W; ++x)
          out.at(n, c, y, x) = a->value.at(n, c, y / 2, x / 2);
  return make_op(std::move(out), {a}, [a, N, C, H, W](Node& n_) {
    Tensor& g = a->ensure_grad();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < 2 * H; ++y)
          for (int64_t x = 0; x < 2 * W; ++x)
            g[((n * C + c) * H + y / 2) * W + x / 2] += n_.grad.at(n, c, y, x);
  });
}

Var gather0(const Var& a, const std::vector<int64_t>& indices) {
  const auto& s = a->value.shape();
  if (s.empty()) throw std::invalid_argument("gather0: scalar input");
  int64_t row = a->value.numel() / std::max<int64_t>(s[0], 1);
  for (int64_t idx : indices)
    if (idx < 0 || idx >= s[0]) throw std::out_of_range("gather0: index out of range");
  std::vector<int64_t> out_shape = s;
  out_shape[0] = static_cast<int64_t>(indices.size());
  Tensor out(out_shape);
  for (size_t i = 0; i < indices.size(); ++i)
    for (int64_t j = 0; j < row; ++j)
      out[static_cast<int64_t>(i) * row + j] = a->value[indices[i] * row + j];
  auto idx_copy = indices;
  return make_op(std::move(out), {a}, [a, idx_copy, row](Node& n) {
    Tensor& g = a->ensure_grad();
    for (size_t i = 0; i < idx_copy.size(); ++i)
      for (int64_t j = 0; j < row; ++j)
        g[idx_copy[i] * row + j] += n.grad[static_cast<int64_t>(i) * row + j];
  });
}

Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat0: empty input");
  std::vector<int64_t> out_shape = parts[0]->value.shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p->value.ndim() != out_shape.size())
      throw std::invalid_argument("concat0: rank mismatch");
    total += p->value.dim(0);
  }
  out_shape[0] = total;
  Tensor out(out_shape);
  int64_t offset = 0;
  std::vector<int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    for (int64_t i = 0; i < p->value.numel(); ++i) out[offset + i] = p->value[i];
    offset += p->value.numel();
  }
  std::vector<Var> parents = parts;
  return make_op(std::move(out), parents, [parts, offsets](Node& n) {
    for (size_t k = 0; k < parts.size(); ++k) {
      if (!parts[k]->requires_grad) continue;
      Tensor& g = parts[k]->ensure_grad();
      for (int64_t i = 0; i < parts[k]->value.numel(); ++i)
        g[i] += n.grad[offsets[k] + i];
    }
  });
}

Var sum(const Var& a) {
  double s = 0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a}, [a](Node& n) {
    Tensor& g = a->ensure_grad();
    for (int64_t i = 0; i < a->value.numel(); ++i) g[i] += n.grad[0];
  });
}

Var mean(const Var& a) {
  if (a->value.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a->value.numel()));
}

Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw std::invalid_argument("conv2d: need rank-4 input and weight");
  const int64_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int64_t O = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != Cin)
    throw std::invalid_argument("conv2d: channel mismatch, input " + x->value.shape_str() +
                                " weight " + w->value.shape_str());
  if (b && b->value.numel() != O) throw std::invalid_argument("conv2d: bias size mismatch");
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output would be empty");

  Tensor out({N, O, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double acc = b ? b->value[o] : 0.0;
          for (int64_t c = 0; c < Cin; ++c)
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= H) continue;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= W) continue;
                acc += x->value.at(n, c, iy, ix) * w->value.at(o, c, ky, kx);
              }
            }
          out.at(n, o, oy, ox) = acc;
        }

  std::vector<Var> parents{x, w};
  if (b) parents.push_back(b);
  return make_op(std::move(out), parents, [x, w, b, stride, pad](Node& node) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    const int64_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    const int64_t O = ws[0], kh = ws[2], kw = ws[3];
    const int64_t Ho = node.value.dim(2), Wo = node.value.dim(3);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < O; ++o)
        for (int64_t oy = 0; oy < Ho; ++oy)
          for (int64_t ox = 0; ox < Wo; ++ox) {
            const double go = node.grad.at(n, o, oy, ox);
            if (go == 0.0) continue;
            if (b && b->requires_grad) b->ensure_grad()[o] += go;
            for (int64_t c = 0; c < Cin; ++c)
              for (int64_t ky = 0; ky < kh; ++ky) {
                const int64_t iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= H) continue;
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const int64_t ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= W) continue;
                  if (x->requires_grad)
                    x->ensure_grad().at(n, c, iy, ix) += go * w->value.at(o, c, ky, kx);
                  if (w->requires_grad)
                    w->ensure_grad().at(o, c, ky, kx) += go * x->value.at(n, c, iy, ix);
                }
              }
          }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const auto& xs = x->value.shape();
  const auto& ws = w->value.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
    throw std::invalid_argument("linear: shape mismatch " + x->value.shape_str() + " vs " +
                                w->value.shape_str());
  const int64_t N = xs[0], I = xs[1], O = ws[0];
  if (b && b->value.numel() != O) throw std::invalid_argument("linear: bias size mismatch");
  Tensor out({N, O});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o) {
      double acc = b ? b->value[o] : 0.0;
      for (int64_t i = 0; i < I; ++i) acc += x->value.at(n, i) * w->value.at(o, i);
      out.at(n, o) = acc;
    }
  std::vector<Var> parents{x, w};
  if (b) parents.push_back(b);
  return make_op(std::move(out), parents, [x, w, b, N, I, O](Node& node) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t o = 0; o < O; ++o) {
        const double go = node.grad.at(n, o);
        if (go == 0.0) continue;
        if (b && b->requires_grad) b->ensure_grad()[o] += go;
        for (int64_t i = 0; i < I; ++i) {
          if (x->requires_grad) x->ensure_grad().at(n, i) += go * w->value.at(o, i);
          if (w->requires_grad) w->ensure_grad().at(o, i) += go * x->value.at(n, i);
        }
      }
  });
}

Var maxpool2d(const Var& x, int64_t kernel, int64_t stride, int64_t pad) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw std::invalid_argument("maxpool2d: need rank-4 input");
  const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int64_t Ho = (H + 2 * pad - kernel) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kernel) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("maxpool2d: output would be empty");
  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()), -1);
  int64_t oi = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int64_t ky = 0; ky < kernel; ++ky) {
            const int64_t iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= H) continue;
            for (int64_t kx = 0; kx < kernel; ++kx) {
              const int64_t ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= W) continue;
              const int64_t idx = ((n * C + c) * H + iy) * W + ix;
              if (x->value[idx] > best) { best = x->value[idx]; best_idx = idx; }
            }
          }
          out[oi] = best_idx < 0 ? 0.0 : best;
          (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
  return make_op(std::move(out), {x}, [x, argmax](Node& node) {
    Tensor& g = x->ensure_grad();
    for (int64_t i = 0; i < node.value.numel(); ++i) {
      const int64_t idx = (*argmax)[static_cast<size_t>(i)];
      if (idx >= 0) g[idx] += node.grad[i];
    }
  });
}

Var channel_scale(const Var& x, const Var& s) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw std::invalid_argument("channel_scale: need rank-4 input");
  const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (s->value.numel() != C)
    throw std::invalid_argument("channel_scale: scale size " + s->value.shape_str() +
                                " does not match channels " + x->value.shape_str());
  Tensor out = x->value;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H * W; ++i)
        out[((n * C + c) * H * W) + i] *= s->value[c];
  return make_op(std::move(out), {x, s}, [x, s, N, C, H, W](Node& node) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H * W; ++i) {
          const int64_t off = (n * C + c) * H * W + i;
          if (x->requires_grad) x->ensure_grad()[off] += node.grad[off] * s->value[c];
          if (s->requires_grad) s->ensure_grad()[c] += node.grad[off] * x->value[off];
        }
  });
}

Var channel_affine(const Var& x, const Var& gamma, const Var& beta) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4) throw std::invalid_argument("channel_affine: need rank-4 input");
  const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (gamma->value.numel() != C || beta->value.numel() != C)
    throw std::invalid_argument("channel_affine: parameter size mismatch");
  Tensor out = x->value;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < H * W; ++i) {
        const int64_t off = (n * C + c) * H * W + i;
        out[off] = out[off] * gamma->value[c] + beta->value[c];
      }
  return make_op(std::move(out), {x, gamma, beta}, [x, gamma, beta, N, C, H, W](Node& node) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < H * W; ++i) {
          const int64_t off = (n * C + c) * H * W + i;
          if (x->requires_grad) x->ensure_grad()[off] += node.grad[off] * gamma->value[c];
          if (gamma->requires_grad) gamma->ensure_grad()[c] += node.grad[off] * x->value[off];
          if (beta->requires_grad) beta->ensure_grad()[c] += node.grad[off];
        }
  });
}

namespace {

// Bilinear sample with the reference ROI-align border rule: zero outside
// [-1, size], clamped interpolation at the borders.
struct BilinearTap {
  int64_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  double w00 = 0, w01 = 0, w10 = 0, w11 = 0;
  bool zero = true;
};

BilinearTap bilinear_tap(double y, double x, int64_t H, int64_t W) {
  BilinearTap t;
  if (y < -1.0 || y > static_cast<double>(H) || x < -1.0 || x > static_cast<double>(W))
    return t;
  t.zero = false;
  if (y <= 0) y = 0;
  if (x <= 0) x = 0;
  t.y0 = static_cast<int64_t>(y);
  t.x0 = static_cast<int64_t>(x);
  if (t.y0 >= H - 1) { t.y0 = t.y1 = H - 1; y = static_cast<double>(t.y0); }
  else t.y1 = t.y0 + 1;
  if (t.x0 >= W - 1) { t.x0 = t.x1 = W - 1; x = static_cast<double>(t.x0); }
  else t.x1 = t.x0 + 1;
  const double ly = y - static_cast<double>(t.y0), lx = x - static_cast<double>(t.x0);
  t.w00 = (1 - ly) * (1 - lx);
  t.w01 = (1 - ly) * lx;
  t.w10 = ly * (1 - lx);
  t.w11 = ly * lx;
  return t;
}

}  // namespace

Var roi_align(const Var& x, const std::vector<Box>& boxes, int64_t out_size,
              double spatial_scale, int64_t sampling_ratio) {
  const auto& xs = x->value.shape();
  if (xs.size() != 4 || xs[0] != 1)
    throw std::invalid_argument("roi_align: need [1,C,H,W] input");
  if (out_size < 1 || sampling_ratio < 1)
    throw std::invalid_argument("roi_align: bad output or sampling size");
  const int64_t C = xs[1], H = xs[2], W = xs[3];
  const int64_t R = static_cast<int64_t>(boxes.size());
  const int64_t k = out_size, sr = sampling_ratio;

  // Precompute taps once; forward and backward share them.
  struct CellTaps { std::vector<BilinearTap> taps; };
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->resize(static_cast<size_t>(R * k * k * sr * sr));
  for (int64_t r = 0; r < R; ++r) {
    const Box& b = boxes[static_cast<size_t>(r)];
    if (!b.valid())
      throw std::invalid_argument("roi_align: degenerate box");
    const double rx1 = b.x1 * spatial_scale - 0.5;
    const double ry1 = b.y1 * spatial_scale - 0.5;
    const double bin_w = (b.x2 - b.x1) * spatial_scale / static_cast<double>(k);
    const double bin_h = (b.y2 - b.y1) * spatial_scale / static_cast<double>(k);
    for (int64_t py = 0; py < k; ++py)
      for (int64_t px = 0; px < k; ++px)
        for (int64_t sy = 0; sy < sr; ++sy)
          for (int64_t sx = 0; sx < sr; ++sx) {
            const double y = ry1 + (static_cast<double>(py) +
                                    (static_cast<double>(sy) + 0.5) / static_cast<double>(sr)) * bin_h;
            const double xx = rx1 + (static_cast<double>(px) +
                                     (static_cast<double>(sx) + 0.5) / static_cast<double>(sr)) * bin_w;
            (*taps)[static_cast<size_t>((((r * k + py) * k + px) * sr + sy) * sr + sx)] =
                bilinear_tap(y, xx, H, W);
          }
  }

  const double inv_samples = 1.0 / static_cast<double>(sr * sr);
  Tensor out({R, C, k, k});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t py = 0; py < k; ++py)
        for (int64_t px = 0; px < k; ++px) {
          double acc = 0;
          for (int64_t s = 0; s < sr * sr; ++s) {
            const BilinearTap& t =
                (*taps)[static_cast<size_t>(((r * k + py) * k + px) * sr * sr + s)];
            if (t.zero) continue;
            acc += t.w00 * x->value.at(0, c, t.y0, t.x0) + t.w01 * x->value.at(0, c, t.y0, t.x1) +
                   t.w10 * x->value.at(0, c, t.y1, t.x0) + t.w11 * x->value.at(0, c, t.y1, t.x1);
          }
          out.at(r, c, py, px) = acc * inv_samples;
        }

  return make_op(std::move(out), {x}, [x, taps, C, H, W, k, sr, inv_samples](Node& node) {
    const int64_t R = node.value.dim(0);
    Tensor& g = x->ensure_grad();
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c)
        for (int64_t py = 0; py < k; ++py)
          for (int64_t px = 0; px < k; ++px) {
            const double go = node.grad.at(r, c, py, px) * inv_samples;
            if (go == 0.0) continue;
            for (int64_t s = 0; s < sr * sr; ++s) {
              const BilinearTap& t =
                  (*taps)[static_cast<size_t>(((r * k + py) * k + px) * sr * sr + s)];
              if (t.zero) continue;
              g[(c * H + t.y0) * W + t.x0] += go * t.w00;
              g[(c * H + t.y0) * W + t.x1] += go * t.w01;
              g[(c * H + t.y1) * W + t.x0] += go * t.w10;
              g[(c * H + t.y1) * W + t.x1] += go * t.w11;
            }
          }
  });
}

Var bce_with_logits_sum(const Var& logits, const Tensor& targets, const Tensor& weights) {
  if (logits->value.numel() != targets.numel() || targets.numel() != weights.numel())
    throw std::invalid_argument("bce_with_logits_sum: size mismatch");
  double total = 0;
  for (int64_t i = 0; i < targets.numel(); ++i) {
    const double l = logits->value[i], t = targets[i];
    total += weights[i] * (std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l))));
  }
  return make_op(Tensor::scalar(total), {logits}, [logits, targets, weights](Node& n) {
    Tensor& g = logits->ensure_grad();
    for (int64_t i = 0; i < targets.numel(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-logits->value[i]));
      g[i] += n.grad[0] * weights[i] * (p - targets[i]);
    }
  });
}

Var smooth_l1_sum(const Var& pred, const Tensor& targets, const Tensor& row_weights,
                  double beta) {
  const auto& ps = pred->value.shape();
  if (ps.size() != 2 || !pred->value.same_shape(targets) ||
      row_weights.numel() != ps[0])
    throw std::invalid_argument("smooth_l1_sum: shape mismatch");
  const int64_t N = ps[0], D = ps[1];
  double total = 0;
  for (int64_t i = 0; i < N; ++i) {
    double row = 0;
    for (int64_t j = 0; j < D; ++j) {
      const double d = std::abs(pred->value.at(i, j) - targets.at(i, j));
      row += d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
    }
    total += row_weights[i] * row;
  }
  return make_op(Tensor::scalar(total), {pred}, [pred, targets, row_weights, beta, N, D](Node& n) {
    Tensor& g = pred->ensure_grad();
    for (int64_t i = 0; i < N; ++i)
      for (int64_t j = 0; j < D; ++j) {
        const double d = pred->value.at(i, j) - targets.at(i, j);
        const double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
        g[i * D + j] += n.grad[0] * row_weights[i] * dd;
      }
  });
}

Tensor finite_difference(const std::function<double()>& f, Tensor& leaf_value, double eps) {
  Tensor out(leaf_value.shape());
  for (int64_t i = 0; i < leaf_value.numel(); ++i) {
    const double saved = leaf_value[i];
    leaf_value[i] = saved + eps;
    const double fp = f();
    leaf_value[i] = saved - eps;
    const double fm = f();
    leaf_value[i] = saved;
    out[i] = (fp - fm) / (2 * eps);
  }
  return out;
}

}  // namespace gt::ad
