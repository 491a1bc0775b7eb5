#include "unicd/weak.hpp"

#include <cmath>

#include "unicd/error.hpp"

namespace unicd {

Tensor normalize_cam(const Tensor& map) { return minmax_normalize(map); }

Classifier::Classifier(int64_t in_channels, ParamStore& ps, Rng& rng, bool zero_init, const std::string& prefix) {
  conv_ = make_conv(ps, prefix, in_channels, 1, 1, rng);
  if (zero_init) conv_.weight.mutable_value().fill(0.0);
}

Classifier::Output Classifier::operator()(const TemporalFused& f) const {
  Output out;
  out.score_map = conv_(f.levels[0]);
  const int64_t n = out.score_map.dim(0);
  out.logits = reshape(global_avg_pool(out.score_map), {n});
  out.cams.reserve(static_cast<size_t>(n));
  for (int64_t s = 0; s < n; ++s)
    out.cams.push_back({normalize_cam(plane(out.score_map.value(), s, 0)), out.logits.value()[s], 1});
  return out;
}

CamOutput classify(const Classifier& head, const TemporalFused& f) { return head(f).cams.at(0); }

namespace {
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid_of(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }
}  // namespace

double cls_loss(double logit, int label) {
  // -[y log s(z) + (1 - y) log(1 - s(z))] = softplus(z) - y z
  return softplus(logit) - static_cast<double>(label) * logit;
}

Var cls_loss(const Var& logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.numel() != static_cast<int64_t>(labels.size()))
    throw Error(ErrorCode::kLengthMismatch, "cls_loss: " + std::to_string(z.numel()) + " logits vs " +
                                                std::to_string(labels.size()) + " labels");
  std::vector<int> y(labels.begin(), labels.end());
  double total = 0;
  for (int64_t i = 0; i < z.numel(); ++i) total += cls_loss(z[i], y[static_cast<size_t>(i)]);
  const double inv = 1.0 / static_cast<double>(z.numel());
  return make_op(Tensor(Shape{}, total * inv), {logits}, [y = std::move(y), inv](Node& n) {
    const Tensor& zv = n.inputs[0]->value;
    Tensor g(zv.shape());
    for (int64_t i = 0; i < zv.numel(); ++i)
      g[i] = (sigmoid_of(zv[i]) - static_cast<double>(y[static_cast<size_t>(i)])) * inv * n.grad[0];
    accumulate_grad(*n.inputs[0], g);
  });
}

Var scr_loss(const Encoder& enc, const Var& images, std::span<const std::string> ids, const SpatialTransform& t,
             const std::optional<VarPyramid>& base) {
  const VarPyramid plain = base ? *base : enc.forward(images, ids, std::nullopt);
  const VarPyramid moved = enc.forward(t.apply(images), ids, t);
  Var total;
  for (size_t i = 0; i < plain.size(); ++i) {
    Var term = mean(abs(sub(t.inverse().apply(moved[i]), plain[i])));
    total = total ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(plain.size()));
}

double scr_loss(const ImagePair& p, const SpatialTransform& t, const Encoder& enc) {
  validate_pair(p);
  const std::array<Tensor, 2> imgs{p.t1, p.t2};
  const std::vector<std::string> ids{p.id + "_A", p.id + "_B"};
  return scr_loss(enc, constant(stack_batch(imgs)), ids, t).value()[0];
}

AnchorRegions anchors_from_map(const Tensor& map, double low, double high) {
  AnchorRegions a{Tensor(map.shape()), Tensor(map.shape()), 0, 0};
  for (int64_t i = 0; i < map.numel(); ++i) {
    if (map[i] >= high) {
      a.r_c[i] = 1.0;
      ++a.area_c;
    } else if (map[i] <= low) {
      a.r_u[i] = 1.0;
      ++a.area_u;
    }
  }
  return a;
}

AnchorRegions extract_anchors(const CamOutput& cam, const RunConfig& cfg) {
  return anchors_from_map(cam.cam, cfg.cam_low, cfg.cam_high);
}

AnchorRegions all_unchanged_anchors(int64_t h, int64_t w) {
  return AnchorRegions{Tensor({h, w}), Tensor({h, w}, 1.0), 0, h * w};
}

Var cfr_level(const Var& f1, const Var& f2, const Tensor& r_c, const Tensor& r_u, double eps) {
  const Tensor& a = f1.value();
  const Tensor& b = f2.value();
  if (a.shape() != b.shape() || a.rank() != 4)
    throw Error(ErrorCode::kShapeMismatch, "cfr_level: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
  if (r_c.numel() != n * hw || r_u.numel() != n * hw)
    throw Error(ErrorCode::kShapeMismatch, "cfr_level: anchor size " + shape_str(r_c.shape()));

  // Per-sample weights w_c = 1 / (|R_c| + eps), w_u = 1 / (|R_u| + eps).
  std::vector<double> wc(static_cast<size_t>(n)), wu(static_cast<size_t>(n));
  double total = 0;
  for (int64_t s = 0; s < n; ++s) {
    double area_c = 0, area_u = 0, mass_c = 0, mass_u = 0;
    for (int64_t i = 0; i < hw; ++i) {
      area_c += r_c[s * hw + i];
      area_u += r_u[s * hw + i];
      double l1 = 0;
      for (int64_t k = 0; k < c; ++k) l1 += std::abs(a[(s * c + k) * hw + i] - b[(s * c + k) * hw + i]);
      mass_c += l1 * r_c[s * hw + i];
      mass_u += l1 * r_u[s * hw + i];
    }
    wc[static_cast<size_t>(s)] = 1.0 / (area_c + eps);
    wu[static_cast<size_t>(s)] = 1.0 / (area_u + eps);
    total += 1.0 - mass_c * wc[static_cast<size_t>(s)] + mass_u * wu[static_cast<size_t>(s)];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return make_op(Tensor(Shape{}, total * inv_n), {f1, f2},
                 [=, wc = std::move(wc), wu = std::move(wu)](Node& node) {
                   const Tensor& av = node.inputs[0]->value;
                   const Tensor& bv = node.inputs[1]->value;
                   Tensor ga(av.shape());
                   for (int64_t s = 0; s < n; ++s)
                     for (int64_t i = 0; i < hw; ++i) {
                       const double w = (-r_c[s * hw + i] * wc[static_cast<size_t>(s)] +
                                         r_u[s * hw + i] * wu[static_cast<size_t>(s)]) *
                                        inv_n * node.grad[0];
                       if (w == 0.0) continue;
                       for (int64_t k = 0; k < c; ++k) {
                         const int64_t idx = (s * c + k) * hw + i;
                         const double d = av[idx] - bv[idx];
                         ga[idx] = d > 0 ? w : (d < 0 ? -w : 0.0);
                       }
                     }
                   if (node.inputs[0]->requires_grad) accumulate_grad(*node.inputs[0], ga);
                   if (node.inputs[1]->requires_grad) {
                     for (auto& v : ga.values()) v = -v;
                     accumulate_grad(*node.inputs[1], ga);
                   }
                 });
}

Var cfr_loss(const VarPyramid& f1, const VarPyramid& f2, std::span<const AnchorRegions> anchors,
             const RunConfig& cfg) {
  const int64_t n = f1[0].dim(0);
  if (static_cast<int64_t>(anchors.size()) != n)
    throw Error(ErrorCode::kLengthMismatch, "cfr_loss: one anchor set per sample required");
  Var total;
  for (size_t i = 0; i < f1.size(); ++i) {
    const int64_t h = f1[i].dim(2), w = f1[i].dim(3);
    std::vector<Tensor> rc, ru;
    for (const auto& a : anchors) {
      rc.push_back(resize_nearest(a.r_c, h, w).reshaped({1, 1, h, w}));
      ru.push_back(resize_nearest(a.r_u, h, w).reshaped({1, 1, h, w}));
    }
    Var term = cfr_level(channel_l2_normalize(f1[i]), channel_l2_normalize(f2[i]), stack_batch(rc), stack_batch(ru),
                         cfg.epsilon);
    total = total ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(f1.size()));
}

double cfr_loss(const FeaturePyramid& f1, const FeaturePyramid& f2, const AnchorRegions& a, const RunConfig& cfg) {
  const std::array<AnchorRegions, 1> anchors{a};
  return cfr_loss(to_var_pyramid(f1), to_var_pyramid(f2), anchors, cfg).value()[0];
}

Var weak_loss(const WeakParts& parts) {
  Var total;
  for (const auto* p : {&parts.cls, &parts.sc, &parts.cf}) {
    if (!*p) continue;
    total = total ? add(total, **p) : **p;
  }
  return total ? total : constant(Tensor(Shape{}, 0.0));
}

double weak_loss(double cls, double sc, double cf) { return cls + sc + cf; }

}  // namespace unicd
