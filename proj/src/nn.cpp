#include "unicd/nn.hpp"

#include <cmath>

#include "unicd/error.hpp"

namespace unicd {

Var ParamStore::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw Error(ErrorCode::kInvalidConfig, "duplicate parameter '" + name + "'");
  auto v = parameter(std::move(init));
  params_.emplace(name, v);
  return v;
}

const Var& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error(ErrorCode::kInvalidConfig, "no parameter '" + name + "'");
  return it->second;
}

int64_t ParamStore::numel() const {
  int64_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

void ParamStore::load_values(const std::map<std::string, Tensor>& values) {
  for (auto& [name, v] : params_) {
    auto it = values.find(name);
    if (it == values.end()) throw Error(ErrorCode::kCheckpointVersionMismatch, "checkpoint lacks '" + name + "'");
    if (it->second.shape() != v.value().shape())
      throw Error(ErrorCode::kCheckpointVersionMismatch, "shape mismatch for '" + name + "'");
    v.mutable_value() = it->second;
  }
  if (values.size() != params_.size())
    throw Error(ErrorCode::kCheckpointVersionMismatch, "checkpoint has extra tensors");
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : params_) out.emplace(name, v.value());
  return out;
}

Tensor randn(Shape s, double stddev, Rng& rng) {
  Tensor t(std::move(s));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Conv2d make_conv(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t out_ch, int64_t k, Rng& rng,
                 bool with_bias) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in_ch * k * k));
  Conv2d c;
  c.weight = ps.add(name + ".weight", randn({out_ch, in_ch, k, k}, stddev, rng));
  if (with_bias) c.bias = ps.add(name + ".bias", Tensor({out_ch}));
  return c;
}

int64_t default_groups(int64_t channels) {
  for (int64_t g : {4, 2})
    if (channels % g == 0 && channels >= 2 * g) return g;
  return 1;
}

GroupNorm make_group_norm(ParamStore& ps, const std::string& name, int64_t channels) {
  GroupNorm g;
  g.gamma = ps.add(name + ".gamma", Tensor({channels}, 1.0));
  g.beta = ps.add(name + ".beta", Tensor({channels}));
  g.groups = default_groups(channels);
  return g;
}

ConvNormRelu make_conv_norm_relu(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t out_ch, Rng& rng) {
  return {make_conv(ps, name + ".conv", in_ch, out_ch, 3, rng), make_group_norm(ps, name + ".norm", out_ch)};
}

void AdamW::step(ParamStore& ps) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, var] : ps.all()) {
    const Tensor& g = var.grad();
    if (g.empty()) continue;
    auto& [m, v] = moments_[name];
    if (m.empty()) {
      m = Tensor::zeros_like(g);
      v = Tensor::zeros_like(g);
    }
    Var handle = var;
    Tensor& p = handle.mutable_value();
    for (int64_t i = 0; i < p.numel(); ++i) {
      p[i] -= lr_ * wd_ * p[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace unicd
