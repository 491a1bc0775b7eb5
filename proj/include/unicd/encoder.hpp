#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "unicd/autograd.hpp"
#include "unicd/nn.hpp"
#include "unicd/transform.hpp"
#include "unicd/types.hpp"

namespace unicd {

enum class EncoderBackend { kToyCnn, kFrozenFile };

struct EncoderSpec {
  EncoderBackend backend = EncoderBackend::kToyCnn;
  std::array<int64_t, kPyramidLevels> channels{16, 32, 64, 128};
  // Frozen backend: channel width of every archived level (adapter input).
  // Unset means the archive already carries channels[i] at level i.
  std::optional<int64_t> adapter_channels;
  int64_t in_channels = 3;

  void validate() const;
};

void to_json(nlohmann::json& j, const EncoderSpec& s);
void from_json(const nlohmann::json& j, EncoderSpec& s);

// Batched pyramid: level i is [N, C_i, H / (4 * 2^i), W / (4 * 2^i)].
using VarPyramid = std::array<Var, kPyramidLevels>;

FeaturePyramid to_pyramid(const VarPyramid& p, int64_t sample, Temporal tag);
// Rank-3 levels become a single-sample batch.
VarPyramid to_var_pyramid(const FeaturePyramid& p);
// Splits a [2N] batch into its first and second halves, per level.
std::pair<VarPyramid, VarPyramid> split_pyramid(const VarPyramid& p);

// Samples [start, start + count) of a batched Var.
Var slice_batch(const Var& x, int64_t start, int64_t count);
Var concat_batch(const std::vector<Var>& xs);

class Encoder {
 public:
  virtual ~Encoder() = default;

  // images: [N, C, H, W]. ids name each sample for file-backed backends.
  // `applied` is the spatial transform already applied to `images`, if any.
  virtual VarPyramid forward(const Var& images, std::span<const std::string> ids,
                             const std::optional<SpatialTransform>& applied) const = 0;

  virtual const EncoderSpec& spec() const = 0;
};

class ToyCnnEncoder final : public Encoder {
 public:
  // Four stages of conv3x3 -> group norm -> ReLU -> mean-pool; the first
  // stage pools 4x, the rest 2x.
  ToyCnnEncoder(EncoderSpec spec, ParamStore& ps, Rng& rng, const std::string& prefix = "encoder");

  VarPyramid forward(const Var& images, std::span<const std::string> ids,
                     const std::optional<SpatialTransform>& applied) const override;
  const EncoderSpec& spec() const override { return spec_; }

 private:
  EncoderSpec spec_;
  std::array<ConvNormRelu, kPyramidLevels> stages_;
};

// Source of precomputed backbone features, one pyramid per image id.
// Levels are [C, h, w].
class FeatureSource {
 public:
  virtual ~FeatureSource() = default;
  virtual FeaturePyramid raw(const std::string& id) const = 0;
};

// Reads "<dir>/<id>.ucda" feature archives with tensors level1..level4.
class ArchiveFeatureSource final : public FeatureSource {
 public:
  explicit ArchiveFeatureSource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  FeaturePyramid raw(const std::string& id) const override;

 private:
  std::filesystem::path dir_;
};

class FunctionFeatureSource final : public FeatureSource {
 public:
  explicit FunctionFeatureSource(std::function<FeaturePyramid(const std::string&)> fn) : fn_(std::move(fn)) {}
  FeaturePyramid raw(const std::string& id) const override { return fn_(id); }

 private:
  std::function<FeaturePyramid(const std::string&)> fn_;
};

void write_feature_archive(const std::filesystem::path& path, const FeaturePyramid& p);
FeaturePyramid read_feature_archive(const std::filesystem::path& path);

enum class AdapterInit { kIdentity, kZero, kRandom };

// Per-level 1x1 channel projection over frozen features.
class Adapter {
 public:
  Adapter(const EncoderSpec& spec, ParamStore& ps, Rng& rng, AdapterInit init, const std::string& prefix = "adapter");

  VarPyramid operator()(const VarPyramid& raw) const;

 private:
  std::array<Conv2d, kPyramidLevels> proj_;
  std::array<int64_t, kPyramidLevels> in_channels_;
};

FeaturePyramid apply_adapter(const FeaturePyramid& raw, const Adapter& adapter);

// Frozen backbone stand-in: raw features come from a FeatureSource and only
// the adapter is trainable. A transform applied to the input is replayed on
// the raw features, since the archived backbone cannot be re-run.
class FrozenFileEncoder final : public Encoder {
 public:
  FrozenFileEncoder(EncoderSpec spec, std::shared_ptr<const FeatureSource> source, ParamStore& ps, Rng& rng,
                    AdapterInit init = AdapterInit::kIdentity);

  VarPyramid forward(const Var& images, std::span<const std::string> ids,
                     const std::optional<SpatialTransform>& applied) const override;
  const EncoderSpec& spec() const override { return spec_; }

 private:
  EncoderSpec spec_;
  std::shared_ptr<const FeatureSource> source_;
  Adapter adapter_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec, ParamStore& ps, Rng& rng,
                                      std::shared_ptr<const FeatureSource> source = nullptr);

// Runs both temporal images through the same encoder.
std::pair<FeaturePyramid, FeaturePyramid> encode(const Encoder& enc, const ImagePair& p);

}  // namespace unicd
