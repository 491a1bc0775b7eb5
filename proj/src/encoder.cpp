#include "unicd/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "unicd/archive.hpp"
#include "unicd/error.hpp"

namespace unicd {

SpatialTransform SpatialTransform::sample(Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kAll.size()) - 1);
  return SpatialTransform(kAll[static_cast<size_t>(pick(rng))]);
}

std::string_view to_string(SpatialTransform::Kind k) {
  switch (k) {
    case SpatialTransform::Kind::kHFlip: return "hflip";
    case SpatialTransform::Kind::kVFlip: return "vflip";
    case SpatialTransform::Kind::kRot180: return "rot180";
  }
  return "?";
}

void EncoderSpec::validate() const {
  for (size_t i = 1; i < channels.size(); ++i)
    if (channels[i] <= channels[i - 1])
      throw Error(ErrorCode::kInvalidConfig, "encoder channels must be strictly increasing");
  if (channels[0] < 1 || in_channels < 1) throw Error(ErrorCode::kInvalidConfig, "encoder channels must be positive");
  if (adapter_channels && *adapter_channels < 1) throw Error(ErrorCode::kInvalidConfig, "adapter_channels must be positive");
}

void to_json(nlohmann::json& j, const EncoderSpec& s) {
  j = {{"backend", s.backend == EncoderBackend::kToyCnn ? "toy_cnn" : "frozen_file"},
       {"channels", s.channels},
       {"in_channels", s.in_channels}};
  if (s.adapter_channels) j["adapter_channels"] = *s.adapter_channels;
}

void from_json(const nlohmann::json& j, EncoderSpec& s) {
  const auto backend = j.value("backend", std::string("toy_cnn"));
  if (backend == "toy_cnn") s.backend = EncoderBackend::kToyCnn;
  else if (backend == "frozen_file") s.backend = EncoderBackend::kFrozenFile;
  else throw Error(ErrorCode::kInvalidConfig, "unknown encoder backend '" + backend + "'");
  if (j.contains("channels")) s.channels = j.at("channels").get<std::array<int64_t, kPyramidLevels>>();
  s.in_channels = j.value("in_channels", int64_t{3});
  if (j.contains("adapter_channels")) s.adapter_channels = j.at("adapter_channels").get<int64_t>();
  else s.adapter_channels.reset();
}

Var slice_batch(const Var& x, int64_t start, int64_t count) {
  const Tensor& v = x.value();
  const int64_t per = v.numel() / v.dim(0);
  Shape s = v.shape();
  s[0] = count;
  std::vector<double> d(v.data() + start * per, v.data() + (start + count) * per);
  return make_op(Tensor(s, std::move(d)), {x}, [start, per](Node& n) {
    Node& src = *n.inputs[0];
    Tensor g = Tensor::zeros_like(src.value);
    std::copy_n(n.grad.data(), n.grad.numel(), g.data() + start * per);
    accumulate_grad(src, g);
  });
}

Var concat_batch(const std::vector<Var>& xs) {
  if (xs.empty()) throw Error(ErrorCode::kEmptyInput, "concat_batch of nothing");
  Shape s = xs[0].shape();
  int64_t total = 0;
  std::vector<double> d;
  for (const auto& x : xs) {
    Shape si = x.shape();
    total += si[0];
    si[0] = s[0];
    if (si != s) throw Error(ErrorCode::kShapeMismatch, "concat_batch: " + shape_str(x.shape()));
    d.insert(d.end(), x.value().values().begin(), x.value().values().end());
  }
  s[0] = total;
  return make_op(Tensor(s, std::move(d)), xs, [](Node& n) {
    int64_t off = 0;
    for (auto& ip : n.inputs) {
      const int64_t cnt = ip->value.numel();
      if (ip->requires_grad) {
        Tensor g(ip->value.shape());
        std::copy_n(n.grad.data() + off, cnt, g.data());
        accumulate_grad(*ip, g);
      }
      off += cnt;
    }
  });
}

FeaturePyramid to_pyramid(const VarPyramid& p, int64_t sample, Temporal tag) {
  FeaturePyramid out;
  out.tag = tag;
  for (int i = 0; i < kPyramidLevels; ++i) {
    Tensor t = batch_item(p[static_cast<size_t>(i)].value(), sample);
    Shape s = t.shape();
    out.levels[static_cast<size_t>(i)] = t.reshaped({s[1], s[2], s[3]});
  }
  return out;
}

VarPyramid to_var_pyramid(const FeaturePyramid& p) {
  VarPyramid out;
  for (int i = 0; i < kPyramidLevels; ++i) {
    const Tensor& t = p.levels[static_cast<size_t>(i)];
    out[static_cast<size_t>(i)] = constant(t.rank() == 3 ? t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)}) : t);
  }
  return out;
}

std::pair<VarPyramid, VarPyramid> split_pyramid(const VarPyramid& p) {
  VarPyramid a, b;
  for (size_t i = 0; i < p.size(); ++i) {
    const int64_t half = p[i].dim(0) / 2;
    a[i] = slice_batch(p[i], 0, half);
    b[i] = slice_batch(p[i], half, half);
  }
  return {a, b};
}

ToyCnnEncoder::ToyCnnEncoder(EncoderSpec spec, ParamStore& ps, Rng& rng, const std::string& prefix)
    : spec_(std::move(spec)) {
  spec_.validate();
  int64_t in = spec_.in_channels;
  for (size_t i = 0; i < stages_.size(); ++i) {
    stages_[i] = make_conv_norm_relu(ps, prefix + ".stage" + std::to_string(i + 1), in, spec_.channels[i], rng);
    in = spec_.channels[i];
  }
}

VarPyramid ToyCnnEncoder::forward(const Var& images, std::span<const std::string>,
                                  const std::optional<SpatialTransform>&) const {
  const Tensor& v = images.value();
  if (v.rank() != 4 || v.dim(1) != spec_.in_channels)
    throw Error(ErrorCode::kChannelMismatch, "encoder input " + shape_str(v.shape()));
  if (v.dim(2) % kMaxStride != 0 || v.dim(3) % kMaxStride != 0)
    throw Error(ErrorCode::kStrideError, "encoder input " + shape_str(v.shape()) + " not divisible by 32");
  VarPyramid out;
  Var x = images;
  for (size_t i = 0; i < stages_.size(); ++i) {
    x = avg_pool(stages_[i](x), i == 0 ? 4 : 2);
    out[i] = x;
  }
  return out;
}

void write_feature_archive(const std::filesystem::path& path, const FeaturePyramid& p) {
  TensorArchive a;
  a.meta = {{"kind", "features"}, {"strides", nlohmann::json::array()}};
  for (int i = 0; i < kPyramidLevels; ++i) {
    a.tensors.emplace("level" + std::to_string(i + 1), p.levels[static_cast<size_t>(i)]);
    a.meta["strides"].push_back(level_stride(i));
  }
  write_archive(path, a, DType::kF32);
}

FeaturePyramid read_feature_archive(const std::filesystem::path& path) {
  TensorArchive a = read_archive(path);
  FeaturePyramid p;
  for (int i = 0; i < kPyramidLevels; ++i) {
    auto it = a.tensors.find("level" + std::to_string(i + 1));
    if (it == a.tensors.end() || it->second.rank() != 3)
      throw Error(ErrorCode::kCorruptImage, path.string() + ": missing or malformed level" + std::to_string(i + 1));
    p.levels[static_cast<size_t>(i)] = it->second;
  }
  for (int i = 1; i < kPyramidLevels; ++i) {
    const auto& a0 = p.levels[static_cast<size_t>(i - 1)];
    const auto& a1 = p.levels[static_cast<size_t>(i)];
    if (a0.dim(1) != 2 * a1.dim(1) || a0.dim(2) != 2 * a1.dim(2))
      throw Error(ErrorCode::kCorruptImage, path.string() + ": levels do not halve in resolution");
  }
  return p;
}

FeaturePyramid ArchiveFeatureSource::raw(const std::string& id) const {
  const auto path = dir_ / (id + ".ucda");
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kBackendUnavailable, "no feature archive " + path.string());
  return read_feature_archive(path);
}

Adapter::Adapter(const EncoderSpec& spec, ParamStore& ps, Rng& rng, AdapterInit init, const std::string& prefix) {
  for (size_t i = 0; i < proj_.size(); ++i) {
    const int64_t in = spec.adapter_channels.value_or(spec.channels[i]);
    const int64_t out = spec.channels[i];
    in_channels_[i] = in;
    const std::string name = prefix + ".level" + std::to_string(i + 1);
    Tensor w({out, in, 1, 1});
    if (init == AdapterInit::kRandom) {
      w = randn({out, in, 1, 1}, std::sqrt(1.0 / static_cast<double>(in)), rng);
    } else if (init == AdapterInit::kIdentity) {
      for (int64_t k = 0; k < std::min(in, out); ++k) w[k * in + k] = 1.0;
    }
    proj_[i].weight = ps.add(name + ".weight", std::move(w));
    proj_[i].bias = ps.add(name + ".bias", Tensor({out}));
  }
}

VarPyramid Adapter::operator()(const VarPyramid& raw) const {
  VarPyramid out;
  for (size_t i = 0; i < proj_.size(); ++i) {
    if (raw[i].dim(1) != in_channels_[i])
      throw Error(ErrorCode::kChannelMismatch, "adapter level" + std::to_string(i + 1) + " expects " +
                                                   std::to_string(in_channels_[i]) + " channels, got " +
                                                   std::to_string(raw[i].dim(1)));
    out[i] = proj_[i](raw[i]);
  }
  return out;
}

FeaturePyramid apply_adapter(const FeaturePyramid& raw, const Adapter& adapter) {
  return to_pyramid(adapter(to_var_pyramid(raw)), 0, raw.tag);
}

FrozenFileEncoder::FrozenFileEncoder(EncoderSpec spec, std::shared_ptr<const FeatureSource> source, ParamStore& ps,
                                     Rng& rng, AdapterInit init)
    : spec_(std::move(spec)), source_(std::move(source)), adapter_(spec_, ps, rng, init) {
  if (!source_) throw Error(ErrorCode::kBackendUnavailable, "frozen_file encoder needs a feature source");
}

VarPyramid FrozenFileEncoder::forward(const Var& images, std::span<const std::string> ids,
                                      const std::optional<SpatialTransform>& applied) const {
  const int64_t n = images.dim(0);
  if (static_cast<int64_t>(ids.size()) != n)
    throw Error(ErrorCode::kBackendUnavailable, "frozen_file encoder needs one id per sample");
  std::array<std::vector<Tensor>, kPyramidLevels> per_level;
  for (int64_t s = 0; s < n; ++s) {
    FeaturePyramid p = source_->raw(ids[static_cast<size_t>(s)]);
    for (size_t i = 0; i < per_level.size(); ++i) {
      Tensor t = p.levels[i];
      const int64_t expect_h = images.dim(2) / level_stride(static_cast<int>(i));
      if (t.dim(1) != expect_h || t.dim(2) != images.dim(3) / level_stride(static_cast<int>(i)))
        throw Error(ErrorCode::kShapeMismatch, "feature level" + std::to_string(i + 1) + " for '" +
                                                   ids[static_cast<size_t>(s)] + "' has size " + shape_str(t.shape()));
      if (applied) t = applied->apply(t);
      per_level[i].push_back(std::move(t));
    }
  }
  VarPyramid raw;
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = constant(stack_batch(per_level[i]));
  return adapter_(raw);
}

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec, ParamStore& ps, Rng& rng,
                                      std::shared_ptr<const FeatureSource> source) {
  if (spec.backend == EncoderBackend::kToyCnn) return std::make_unique<ToyCnnEncoder>(spec, ps, rng);
  if (!source) throw Error(ErrorCode::kBackendUnavailable, "frozen_file backend given no feature files");
  return std::make_unique<FrozenFileEncoder>(spec, std::move(source), ps, rng);
}

std::pair<FeaturePyramid, FeaturePyramid> encode(const Encoder& enc, const ImagePair& p) {
  validate_pair(p);
  const std::array<Tensor, 2> imgs{p.t1, p.t2};
  const std::vector<std::string> ids{p.id + "_A", p.id + "_B"};
  VarPyramid out = enc.forward(constant(stack_batch(imgs)), ids, std::nullopt);
  return {to_pyramid(out, 0, Temporal::kT1), to_pyramid(out, 1, Temporal::kT2)};
}

}  // namespace unicd
