#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>

#include "unicd/autograd.hpp"
#include "unicd/types.hpp"

namespace unicd {

using Rng = std::mt19937_64;

// Named, ordered collection of trainable tensors. Iteration order is the
// lexicographic name order, which fixes checkpoint layout and optimizer order.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  const Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  const std::map<std::string, Var>& all() const { return params_; }
  size_t size() const { return params_.size(); }
  int64_t numel() const;

  void zero_grad();
  // Copies values from another store with identical names and shapes.
  void load_values(const std::map<std::string, Tensor>& values);
  std::map<std::string, Tensor> snapshot() const;

 private:
  std::map<std::string, Var> params_;
};

struct Conv2d {
  Var weight;
  std::optional<Var> bias;

  Var operator()(const Var& x) const { return conv2d(x, weight, bias); }
};

// He-normal weights, zero bias.
Conv2d make_conv(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t out_ch, int64_t k, Rng& rng,
                 bool with_bias = true);

struct GroupNorm {
  Var gamma;
  Var beta;
  int64_t groups = 1;

  Var operator()(const Var& x) const { return group_norm(x, groups, gamma, beta); }
};

GroupNorm make_group_norm(ParamStore& ps, const std::string& name, int64_t channels);
int64_t default_groups(int64_t channels);

// conv3x3 -> group norm -> ReLU
struct ConvNormRelu {
  Conv2d conv;
  GroupNorm norm;

  Var operator()(const Var& x) const { return relu(norm(conv(x))); }
};

ConvNormRelu make_conv_norm_relu(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t out_ch, Rng& rng);

class AdamW {
 public:
  AdamW(const RunConfig& cfg) : lr_(cfg.lr), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), wd_(cfg.weight_decay) {}

  void step(ParamStore& ps);
  int64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_, wd_;
  int64_t t_ = 0;
  std::map<std::string, std::pair<Tensor, Tensor>> moments_;
};

Tensor randn(Shape s, double stddev, Rng& rng);

}  // namespace unicd
