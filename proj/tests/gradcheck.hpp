#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "unicd/autograd.hpp"
#include "unicd/nn.hpp"

namespace unicd::testing {

struct GradReport {
  double max_abs = 0;   // largest |analytic - numeric|
  double max_grad = 0;  // largest |gradient| seen
  double rel() const { return max_abs / std::max(max_grad, 1e-12); }
};

// Central differences against the tape. f must build a fresh graph from the
// given parameter Vars and return a scalar.
inline GradReport gradcheck(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Tensor>& inputs,
                            double h = 1e-5) {
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(parameter(t));
  backward(f(vars));

  GradReport r;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = vars[k].grad().empty() ? Tensor(inputs[k].shape()) : vars[k].grad();
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var> v;
        for (size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] += delta;
          v.push_back(constant(t));
        }
        return f(v).value()[0];
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      const double err = std::abs(numeric - analytic[i]);
      r.max_abs = std::max(r.max_abs, err);
      r.max_grad = std::max({r.max_grad, std::abs(numeric), std::abs(analytic[i])});
    }
  }
  return r;
}

// Same check over the parameters of a store, perturbed in place. `stride`
// subsamples the flattened parameter list to keep the cost bounded.
inline GradReport gradcheck_params(ParamStore& ps, const std::function<Var()>& f, int64_t stride = 1,
                                   double h = 1e-5) {
  ps.zero_grad();
  backward(f());
  GradReport r;
  int64_t k = 0;
  for (auto& [name, var] : ps.all()) {
    Var v = var;
    const Tensor analytic = v.grad().empty() ? Tensor(v.shape()) : v.grad();
    for (int64_t i = 0; i < v.value().numel(); ++i, ++k) {
      if (k % stride != 0) continue;
      const double orig = v.value()[i];
      v.mutable_value()[i] = orig + h;
      const double up = f().value()[0];
      v.mutable_value()[i] = orig - h;
      const double down = f().value()[0];
      v.mutable_value()[i] = orig;
      const double numeric = (up - down) / (2 * h);
      r.max_abs = std::max(r.max_abs, std::abs(numeric - analytic[i]));
      r.max_grad = std::max({r.max_grad, std::abs(numeric), std::abs(analytic[i])});
    }
  }
  return r;
}

}  // namespace unicd::testing
