#include "unicd/sup_loss.hpp"

#include <algorithm>

#include "unicd/error.hpp"

namespace unicd {

SupLoss sup_loss(const Var& scores, const Tensor& labels) {
  const Tensor& s = scores.value();
  if (s.numel() != labels.numel())
    throw Error(ErrorCode::kShapeMismatch, "sup_loss: scores " + shape_str(s.shape()) + " vs labels " +
                                               shape_str(labels.shape()));
  SupLossReport r;
  double su = 0, sc = 0;
  for (int64_t i = 0; i < s.numel(); ++i) {
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw Error(ErrorCode::kRangeError, "sup_loss: label not binary");
    if (y == 1.0) {
      ++r.n_c;
      const double h = std::max(0.0, 1.0 - s[i]);
      sc += h * h;
    } else {
      ++r.n_u;
      su += s[i] * s[i];
    }
  }
  r.unchanged_term = r.n_u > 0 ? su / static_cast<double>(r.n_u) : 0.0;
  r.changed_term = r.n_c > 0 ? sc / static_cast<double>(r.n_c) : 0.0;
  r.total = r.unchanged_term + r.changed_term;

  const double inv_u = r.n_u > 0 ? 1.0 / static_cast<double>(r.n_u) : 0.0;
  const double inv_c = r.n_c > 0 ? 1.0 / static_cast<double>(r.n_c) : 0.0;
  Var total = make_op(Tensor(Shape{}, r.total), {scores}, [labels, inv_u, inv_c](Node& n) {
    const Tensor& sv = n.inputs[0]->value;
    Tensor g(sv.shape());
    const double up = n.grad[0];
    for (int64_t i = 0; i < sv.numel(); ++i) {
      if (labels[i] == 1.0) g[i] = -2.0 * std::max(0.0, 1.0 - sv[i]) * inv_c * up;
      else g[i] = 2.0 * sv[i] * inv_u * up;
    }
    accumulate_grad(*n.inputs[0], g);
  });
  return {total, r};
}

SupLossReport sup_loss(const ChangeMap& pred, const Tensor& label) {
  return sup_loss(constant(pred.scores), label).report;
}

}  // namespace unicd
