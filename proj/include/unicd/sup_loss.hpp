#pragma once

#include <cstdint>

#include "unicd/autograd.hpp"
#include "unicd/types.hpp"

namespace unicd {

struct SupLossReport {
  double total = 0;
  double unchanged_term = 0;
  double changed_term = 0;
  int64_t n_u = 0;
  int64_t n_c = 0;
};

struct SupLoss {
  Var total;
  SupLossReport report;
};

// Batch-balanced contrastive loss
//
//   L = 1/N_u * sum (1 - Y) * S^2  +  1/N_c * sum Y * max(0, 1 - S)^2
//
// with S the sigmoid scores and N_u / N_c counted over the whole batch. A
// term whose count is zero contributes exactly 0.
//
// scores: [N, 1, H, W]; labels: binary, same number of elements.
SupLoss sup_loss(const Var& scores, const Tensor& labels);

SupLossReport sup_loss(const ChangeMap& pred, const Tensor& label);

}  // namespace unicd
