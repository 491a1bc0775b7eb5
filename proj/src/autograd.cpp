#include "unicd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <Eigen/Core>

#include "unicd/error.hpp"

namespace unicd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4) throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": expected [N,C,H,W], got " + shape_str(t.shape()));
}

Node& in(Node& n, size_t i) { return *n.inputs[i]; }

}  // namespace

Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(std::move(n));
}

Var parameter(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return Var(std::move(n));
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& v : inputs) n->requires_grad = n->requires_grad || v.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

void accumulate_grad(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  n.grad += g;
}

void backward(const Var& root) {
  if (root.value().numel() != 1) throw Error(ErrorCode::kShapeMismatch, "backward: root must be a scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* child = node->inputs[idx++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  accumulate_grad(*root.node(), Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var detach(const Var& v) { return constant(v.value()); }

Var add(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return make_op(std::move(out), {a, b}, [](Node& n) {
    accumulate_grad(in(n, 0), n.grad);
    accumulate_grad(in(n, 1), n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    accumulate_grad(in(n, 0), n.grad);
    if (in(n, 1).requires_grad) {
      Tensor g = n.grad;
      for (auto& v : g.values()) v = -v;
      accumulate_grad(in(n, 1), g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    for (size_t k = 0; k < 2; ++k) {
      if (!in(n, k).requires_grad) continue;
      const Tensor& other = in(n, 1 - k).value;
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= other[i];
      accumulate_grad(in(n, k), g);
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor g = n.grad;
    for (auto& v : g.values()) v *= s;
    accumulate_grad(in(n, 0), g);
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += s;
  return make_op(std::move(out), {a}, [](Node& n) { accumulate_grad(in(n, 0), n.grad); });
}

Var relu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0 ? v : 0.0;
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (!(n.value[i] > 0)) g[i] = 0.0;
    accumulate_grad(in(n, 0), g);
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return make_op(std::move(out), {x}, [](Node& n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= n.value[i] * (1.0 - n.value[i]);
    accumulate_grad(in(n, 0), g);
  });
}

Var abs(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::abs(v);
  return make_op(std::move(out), {x}, [](Node& n) {
    const Tensor& xv = in(n, 0).value;
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= xv[i] > 0 ? 1.0 : (xv[i] < 0 ? -1.0 : 0.0);
    accumulate_grad(in(n, 0), g);
  });
}

Var sum(const Var& x) {
  return make_op(Tensor(Shape{}, x.value().sum()), {x}, [](Node& n) {
    accumulate_grad(in(n, 0), Tensor(in(n, 0).value.shape(), n.grad[0]));
  });
}

Var mean(const Var& x) {
  const double count = static_cast<double>(std::max<int64_t>(1, x.value().numel()));
  return make_op(Tensor(Shape{}, x.value().sum() / count), {x}, [count](Node& n) {
    accumulate_grad(in(n, 0), Tensor(in(n, 0).value.shape(), n.grad[0] / count));
  });
}

Var reshape(const Var& x, Shape s) {
  return make_op(x.value().reshaped(std::move(s)), {x}, [](Node& n) {
    accumulate_grad(in(n, 0), n.grad.reshaped(in(n, 0).value.shape()));
  });
}

namespace {

// col is [Ci*k*k, H*W] for one sample.
void im2col(const double* x, int64_t ci, int64_t h, int64_t w, int64_t k, double* col) {
  const int64_t pad = k / 2;
  for (int64_t c = 0; c < ci; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * h * w;
        const double* src = x + c * h * w;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          double* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          for (int64_t xx = 0; xx < w; ++xx) {
            const int64_t sx = xx + kx - pad;
            dst[xx] = (sx >= 0 && sx < w) ? src[sy * w + sx] : 0.0;
          }
        }
      }
}

void col2im(const double* col, int64_t ci, int64_t h, int64_t w, int64_t k, double* x) {
  const int64_t pad = k / 2;
  for (int64_t c = 0; c < ci; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * h * w;
        double* dst = x + c * h * w;
        for (int64_t y = 0; y < h; ++y) {
          const int64_t sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int64_t xx = 0; xx < w; ++xx) {
            const int64_t sx = xx + kx - pad;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += row[y * w + xx];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const std::optional<Var>& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_rank4(xv, "conv2d");
  if (wv.rank() != 4 || wv.dim(1) != xv.dim(1) || wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0)
    throw Error(ErrorCode::kChannelMismatch,
                "conv2d: weight " + shape_str(wv.shape()) + " incompatible with input " + shape_str(xv.shape()));
  const int64_t n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int64_t co = wv.dim(0), k = wv.dim(2), hw = h * wd, kk = ci * k * k;
  if (b && b->value().numel() != co) throw Error(ErrorCode::kChannelMismatch, "conv2d: bias size");

  Tensor out({n, co, h, wd});
  std::vector<double> col(static_cast<size_t>(kk * hw));
  CMapMat wm(wv.data(), co, kk);
  for (int64_t s = 0; s < n; ++s) {
    const double* xs = xv.data() + s * ci * hw;
    MapMat om(out.data() + s * co * hw, co, hw);
    if (k == 1) {
      om.noalias() = wm * CMapMat(xs, ci, hw);
    } else {
      im2col(xs, ci, h, wd, k, col.data());
      om.noalias() = wm * CMapMat(col.data(), kk, hw);
    }
    if (b) om.colwise() += Eigen::Map<const Eigen::VectorXd>(b->value().data(), co);
  }

  std::vector<Var> inputs{x, w};
  if (b) inputs.push_back(*b);
  return make_op(std::move(out), std::move(inputs), [=](Node& node) {
    Node& xn = in(node, 0);
    Node& wn = in(node, 1);
    const bool has_b = node.inputs.size() > 2;
    Tensor gx = xn.requires_grad ? Tensor(xn.value.shape()) : Tensor();
    Tensor gw = wn.requires_grad ? Tensor(wn.value.shape()) : Tensor();
    Tensor gb = has_b && in(node, 2).requires_grad ? Tensor(Shape{co}) : Tensor();
    std::vector<double> colb(static_cast<size_t>(kk * hw));
    CMapMat wmat(wn.value.data(), co, kk);
    for (int64_t s = 0; s < n; ++s) {
      CMapMat gout(node.grad.data() + s * co * hw, co, hw);
      const double* xs = xn.value.data() + s * ci * hw;
      if (!gw.empty()) {
        MapMat gwm(gw.data(), co, kk);
        if (k == 1) {
          gwm.noalias() += gout * CMapMat(xs, ci, hw).transpose();
        } else {
          im2col(xs, ci, h, wd, k, colb.data());
          gwm.noalias() += gout * CMapMat(colb.data(), kk, hw).transpose();
        }
      }
      if (!gb.empty()) Eigen::Map<Eigen::VectorXd>(gb.data(), co) += gout.rowwise().sum();
      if (!gx.empty()) {
        if (k == 1) {
          MapMat(gx.data() + s * ci * hw, ci, hw).noalias() += wmat.transpose() * gout;
        } else {
          MapMat(colb.data(), kk, hw).noalias() = wmat.transpose() * gout;
          col2im(colb.data(), ci, h, wd, k, gx.data() + s * ci * hw);
        }
      }
    }
    if (!gx.empty()) accumulate_grad(xn, gx);
    if (!gw.empty()) accumulate_grad(wn, gw);
    if (!gb.empty()) accumulate_grad(in(node, 2), gb);
  });
}

Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  require_rank4(xv, "group_norm");
  const int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (c % groups != 0) throw Error(ErrorCode::kChannelMismatch, "group_norm: channels not divisible by groups");
  if (gamma.value().numel() != c || beta.value().numel() != c)
    throw Error(ErrorCode::kChannelMismatch, "group_norm: affine size");
  const int64_t cg = c / groups, m = cg * hw;

  Tensor xhat(xv.shape());
  std::vector<double> inv_std(static_cast<size_t>(n * groups));
  Tensor out(xv.shape());
  for (int64_t s = 0; s < n; ++s)
    for (int64_t g = 0; g < groups; ++g) {
      const int64_t base = (s * c + g * cg) * hw;
      double mu = 0;
      for (int64_t i = 0; i < m; ++i) mu += xv[base + i];
      mu /= static_cast<double>(m);
      double var = 0;
      for (int64_t i = 0; i < m; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[static_cast<size_t>(s * groups + g)] = is;
      for (int64_t cc = 0; cc < cg; ++cc) {
        const int64_t ch = g * cg + cc;
        for (int64_t i = 0; i < hw; ++i) {
          const int64_t idx = base + cc * hw + i;
          xhat[idx] = (xv[idx] - mu) * is;
          out[idx] = gamma.value()[ch] * xhat[idx] + beta.value()[ch];
        }
      }
    }

  return make_op(std::move(out), {x, gamma, beta}, [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& node) {
    Node& xn = in(node, 0);
    Node& gn = in(node, 1);
    Node& bn = in(node, 2);
    const Tensor& gy = node.grad;
    Tensor ggamma({c}), gbeta({c});
    Tensor gx = xn.requires_grad ? Tensor(xn.value.shape()) : Tensor();
    for (int64_t s = 0; s < n; ++s)
      for (int64_t g = 0; g < groups; ++g) {
        const int64_t base = (s * c + g * cg) * hw;
        double sum_d = 0, sum_dx = 0;
        for (int64_t cc = 0; cc < cg; ++cc) {
          const int64_t ch = g * cg + cc;
          const double gam = gn.value[ch];
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = base + cc * hw + i;
            ggamma[ch] += gy[idx] * xhat[idx];
            gbeta[ch] += gy[idx];
            const double d = gy[idx] * gam;
            sum_d += d;
            sum_dx += d * xhat[idx];
          }
        }
        if (gx.empty()) continue;
        const double is = inv_std[static_cast<size_t>(s * groups + g)];
        const double md = static_cast<double>(m);
        for (int64_t cc = 0; cc < cg; ++cc) {
          const double gam = gn.value[g * cg + cc];
          for (int64_t i = 0; i < hw; ++i) {
            const int64_t idx = base + cc * hw + i;
            const double d = gy[idx] * gam;
            gx[idx] = is / md * (md * d - sum_d - xhat[idx] * sum_dx);
          }
        }
      }
    if (!gx.empty()) accumulate_grad(xn, gx);
    accumulate_grad(gn, ggamma.reshaped(gn.value.shape()));
    accumulate_grad(bn, gbeta.reshaped(bn.value.shape()));
  });
}

Var avg_pool(const Var& x, int64_t k) {
  const Tensor& xv = x.value();
  require_rank4(xv, "avg_pool");
  const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % k != 0 || w % k != 0) throw Error(ErrorCode::kStrideError, "avg_pool: size not divisible by window");
  const int64_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out({n, c, oh, ow});
  for (int64_t p = 0; p < n * c; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) out[(p * oh + y / k) * ow + xx / k] += xv[(p * h + y) * w + xx] * inv;
  return make_op(std::move(out), {x}, [=](Node& node) {
    Tensor g(Shape{n, c, h, w});
    for (int64_t p = 0; p < n * c; ++p)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) g[(p * h + y) * w + xx] = node.grad[(p * oh + y / k) * ow + xx / k] * inv;
    accumulate_grad(in(node, 0), g);
  });
}

namespace {

struct Lerp {
  int64_t i0, i1;
  double l1;  // weight of i1
};

std::vector<Lerp> bilinear_taps(int64_t in, int64_t out) {
  std::vector<Lerp> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

void bilinear_forward(const Tensor& xv, Tensor& out) {
  const int64_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int64_t oh = out.dim(2), ow = out.dim(3);
  const auto ty = bilinear_taps(h, oh), tx = bilinear_taps(w, ow);
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = out.data() + p * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      const auto& a = ty[static_cast<size_t>(y)];
      for (int64_t xx = 0; xx < ow; ++xx) {
        const auto& b = tx[static_cast<size_t>(xx)];
        const double top = src[a.i0 * w + b.i0] * (1 - b.l1) + src[a.i0 * w + b.i1] * b.l1;
        const double bot = src[a.i1 * w + b.i0] * (1 - b.l1) + src[a.i1 * w + b.i1] * b.l1;
        dst[y * ow + xx] = top * (1 - a.l1) + bot * a.l1;
      }
    }
  }
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int64_t out_h, int64_t out_w) {
  require_rank4(x, "resize_bilinear");
  Tensor out({x.dim(0), x.dim(1), out_h, out_w});
  bilinear_forward(x, out);
  return out;
}

Var resize_bilinear(const Var& x, int64_t out_h, int64_t out_w) {
  const Tensor& xv = x.value();
  if (xv.dim(2) == out_h && xv.dim(3) == out_w) return x;
  Tensor out = resize_bilinear(xv, out_h, out_w);
  return make_op(std::move(out), {x}, [](Node& node) {
    const Tensor& xv = in(node, 0).value;
    const int64_t planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int64_t oh = node.value.dim(2), ow = node.value.dim(3);
    const auto ty = bilinear_taps(h, oh), tx = bilinear_taps(w, ow);
    Tensor g(xv.shape());
    for (int64_t p = 0; p < planes; ++p) {
      double* dst = g.data() + p * h * w;
      const double* go = node.grad.data() + p * oh * ow;
      for (int64_t y = 0; y < oh; ++y) {
        const auto& a = ty[static_cast<size_t>(y)];
        for (int64_t xx = 0; xx < ow; ++xx) {
          const auto& b = tx[static_cast<size_t>(xx)];
          const double v = go[y * ow + xx];
          dst[a.i0 * w + b.i0] += v * (1 - a.l1) * (1 - b.l1);
          dst[a.i0 * w + b.i1] += v * (1 - a.l1) * b.l1;
          dst[a.i1 * w + b.i0] += v * a.l1 * (1 - b.l1);
          dst[a.i1 * w + b.i1] += v * a.l1 * b.l1;
        }
      }
    }
    accumulate_grad(in(node, 0), g);
  });
}

Tensor resize_nearest(const Tensor& x, int64_t out_h, int64_t out_w) {
  const bool two_d = x.rank() == 2;
  const Tensor x4 = two_d ? x.reshaped({1, 1, x.dim(0), x.dim(1)}) : x;
  require_rank4(x4, "resize_nearest");
  const int64_t planes = x4.dim(0) * x4.dim(1), h = x4.dim(2), w = x4.dim(3);
  Tensor out({x4.dim(0), x4.dim(1), out_h, out_w});
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < out_h; ++y) {
      const int64_t sy = std::min(h - 1, y * h / out_h);
      for (int64_t xx = 0; xx < out_w; ++xx) {
        const int64_t sx = std::min(w - 1, xx * w / out_w);
        out[(p * out_h + y) * out_w + xx] = x4[(p * h + sy) * w + sx];
      }
    }
  return two_d ? out.reshaped({out_h, out_w}) : out;
}

Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error(ErrorCode::kEmptyInput, "concat_channels of nothing");
  const Tensor& first = xs[0].value();
  require_rank4(first, "concat_channels");
  const int64_t n = first.dim(0), h = first.dim(2), w = first.dim(3);
  int64_t c_total = 0;
  for (const auto& v : xs) {
    const Tensor& t = v.value();
    if (t.rank() != 4 || t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw Error(ErrorCode::kShapeMismatch, "concat_channels: " + shape_str(t.shape()) + " vs " + shape_str(first.shape()));
    c_total += t.dim(1);
  }
  const int64_t hw = h * w;
  Tensor out({n, c_total, h, w});
  for (int64_t s = 0; s < n; ++s) {
    int64_t off = 0;
    for (const auto& v : xs) {
      const int64_t c = v.dim(1);
      std::copy_n(v.value().data() + s * c * hw, c * hw, out.data() + (s * c_total + off) * hw);
      off += c;
    }
  }
  return make_op(std::move(out), xs, [=](Node& node) {
    int64_t off = 0;
    for (auto& ip : node.inputs) {
      const int64_t c = ip->value.dim(1);
      if (ip->requires_grad) {
        Tensor g(ip->value.shape());
        for (int64_t s = 0; s < n; ++s)
          std::copy_n(node.grad.data() + (s * c_total + off) * hw, c * hw, g.data() + s * c * hw);
        accumulate_grad(*ip, g);
      }
      off += c;
    }
  });
}

Tensor flip(const Tensor& x, bool horizontal, bool vertical) {
  if (x.rank() < 2) throw Error(ErrorCode::kShapeMismatch, "flip needs rank >= 2");
  const int64_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const int64_t planes = x.numel() / (h * w);
  Tensor out(x.shape());
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < h; ++y) {
      const int64_t sy = vertical ? h - 1 - y : y;
      for (int64_t xx = 0; xx < w; ++xx) {
        const int64_t sx = horizontal ? w - 1 - xx : xx;
        out[(p * h + y) * w + xx] = x[(p * h + sy) * w + sx];
      }
    }
  return out;
}

Var flip(const Var& x, bool horizontal, bool vertical) {
  return make_op(flip(x.value(), horizontal, vertical), {x}, [horizontal, vertical](Node& node) {
    accumulate_grad(in(node, 0), flip(node.grad, horizontal, vertical));
  });
}

Var channel_l2_normalize(const Var& x) {
  constexpr double kDelta = 1e-12;
  const Tensor& xv = x.value();
  require_rank4(xv, "channel_l2_normalize");
  const int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor out(xv.shape());
  Tensor norms({n, hw});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t i = 0; i < hw; ++i) {
      double ss = kDelta;
      for (int64_t k = 0; k < c; ++k) ss += xv[(s * c + k) * hw + i] * xv[(s * c + k) * hw + i];
      const double nr = std::sqrt(ss);
      norms[s * hw + i] = nr;
      for (int64_t k = 0; k < c; ++k) out[(s * c + k) * hw + i] = xv[(s * c + k) * hw + i] / nr;
    }
  return make_op(std::move(out), {x}, [=, norms = std::move(norms)](Node& node) {
    Tensor g(node.value.shape());
    for (int64_t s = 0; s < n; ++s)
      for (int64_t i = 0; i < hw; ++i) {
        double dot = 0;
        for (int64_t k = 0; k < c; ++k) dot += node.grad[(s * c + k) * hw + i] * node.value[(s * c + k) * hw + i];
        const double nr = norms[s * hw + i];
        for (int64_t k = 0; k < c; ++k) {
          const int64_t idx = (s * c + k) * hw + i;
          g[idx] = (node.grad[idx] - node.value[idx] * dot) / nr;
        }
      }
    accumulate_grad(in(node, 0), g);
  });
}

Var mask_channels(const Var& x, const Tensor& mask) {
  const Tensor& xv = x.value();
  require_rank4(xv, "mask_channels");
  const int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  if (mask.numel() != n * hw) throw Error(ErrorCode::kShapeMismatch, "mask_channels: mask " + shape_str(mask.shape()));
  Tensor out = xv;
  for (int64_t s = 0; s < n; ++s)
    for (int64_t k = 0; k < c; ++k)
      for (int64_t i = 0; i < hw; ++i) out[(s * c + k) * hw + i] *= mask[s * hw + i];
  return make_op(std::move(out), {x}, [=](Node& node) {
    Tensor g = node.grad;
    for (int64_t s = 0; s < n; ++s)
      for (int64_t k = 0; k < c; ++k)
        for (int64_t i = 0; i < hw; ++i) g[(s * c + k) * hw + i] *= mask[s * hw + i];
    accumulate_grad(in(node, 0), g);
  });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x.value();
  require_rank4(xv, "global_avg_pool");
  const int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3), hw = h * w;
  Tensor out({n, c});
  for (int64_t p = 0; p < n * c; ++p) {
    double s = 0;
    for (int64_t i = 0; i < hw; ++i) s += xv[p * hw + i];
    out[p] = s / static_cast<double>(hw);
  }
  return make_op(std::move(out), {x}, [=](Node& node) {
    Tensor g(Shape{n, c, h, w});
    for (int64_t p = 0; p < n * c; ++p)
      for (int64_t i = 0; i < hw; ++i) g[p * hw + i] = node.grad[p] / static_cast<double>(hw);
    accumulate_grad(in(node, 0), g);
  });
}

}  // namespace unicd
