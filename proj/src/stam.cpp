#include "unicd/stam.hpp"

#include <algorithm>

#include "unicd/error.hpp"

namespace unicd {

Stam::Stam(const std::array<int64_t, kPyramidLevels>& channels, bool use_stam, ParamStore& ps, Rng& rng,
           const std::string& prefix)
    : use_stam_(use_stam) {
  for (size_t i = 0; i < kFusedLevels; ++i) {
    const std::string lvl = std::to_string(i + 1);
    if (use_stam_) {
      spatial_[i] = make_conv_norm_relu(ps, prefix + ".spatial" + lvl, channels[i] + channels[i + 1], channels[i], rng);
      temporal_[i] = make_conv_norm_relu(ps, prefix + ".temporal" + lvl, 2 * channels[i], channels[i], rng);
    } else {
      baseline_[i] = make_conv(ps, prefix + ".concat" + lvl, 2 * channels[i], channels[i], 1, rng);
    }
  }
}

SpatialFused Stam::spatial_fuse(const VarPyramid& pyr, Temporal tag) const {
  SpatialFused out;
  out.tag = tag;
  for (size_t i = 0; i < kFusedLevels; ++i) {
    const Var& fine = pyr[i];
    Var coarse = resize_bilinear(pyr[i + 1], fine.dim(2), fine.dim(3));
    out.levels[i] = spatial_[i](concat_channels({fine, coarse}));
  }
  return out;
}

TemporalFused Stam::temporal_fuse(const SpatialFused& a, const SpatialFused& b) const {
  TemporalFused out;
  for (size_t i = 0; i < kFusedLevels; ++i) {
    if (a.levels[i].shape() != b.levels[i].shape())
      throw Error(ErrorCode::kShapeMismatch, "temporal_fuse level " + std::to_string(i + 1) + ": " +
                                                 shape_str(a.levels[i].shape()) + " vs " + shape_str(b.levels[i].shape()));
    out.levels[i] = temporal_[i](concat_channels({a.levels[i], b.levels[i]}));
  }
  return out;
}

TemporalFused Stam::operator()(const VarPyramid& p1, const VarPyramid& p2) const {
  if (use_stam_) return temporal_fuse(spatial_fuse(p1, Temporal::kT1), spatial_fuse(p2, Temporal::kT2));
  TemporalFused out;
  for (size_t i = 0; i < kFusedLevels; ++i) out.levels[i] = baseline_[i](concat_channels({p1[i], p2[i]}));
  return out;
}

Decoder::Decoder(const std::array<int64_t, kPyramidLevels>& channels, int64_t width, ParamStore& ps, Rng& rng,
                 bool zero_head, const std::string& prefix) {
  const int64_t half = std::max<int64_t>(1, width / 2);
  for (size_t i = 0; i < kFusedLevels; ++i)
    proj_[i] = make_conv(ps, prefix + ".proj" + std::to_string(i + 1), channels[i], width, 1, rng);
  refine_[0] = make_conv(ps, prefix + ".refine1", width, width, 3, rng);
  refine_[1] = make_conv(ps, prefix + ".refine2", width, width, 3, rng);
  refine_[2] = make_conv(ps, prefix + ".refine3", width, half, 3, rng);
  refine_[3] = make_conv(ps, prefix + ".refine4", half, half, 3, rng);
  head_ = make_conv(ps, prefix + ".head", half, 1, 1, rng);
  if (zero_head) head_.weight.mutable_value().fill(0.0);
}

Var Decoder::operator()(const TemporalFused& f) const {
  Var x = proj_[2](f.levels[2]);
  for (int i = 1; i >= 0; --i) {
    const Var& skip = f.levels[static_cast<size_t>(i)];
    x = add(resize_bilinear(x, skip.dim(2), skip.dim(3)), proj_[static_cast<size_t>(i)](skip));
    x = relu(refine_[static_cast<size_t>(1 - i)](x));
  }
  for (size_t k = 2; k < 4; ++k) {
    x = resize_bilinear(x, 2 * x.dim(2), 2 * x.dim(3));
    x = relu(refine_[k](x));
  }
  return sigmoid(head_(x));
}

ChangeMap to_change_map(const Var& scores, int64_t sample, double threshold) {
  return ChangeMap{plane(scores.value(), sample, 0), threshold};
}

}  // namespace unicd
