#pragma once

#include <array>
#include <optional>
#include <string>

#include "unicd/encoder.hpp"
#include "unicd/nn.hpp"

namespace unicd {

inline constexpr int kFusedLevels = 3;

// S_i^t for i = 1..3, each at pyramid level i resolution with channels[i].
struct SpatialFused {
  std::array<Var, kFusedLevels> levels;
  Temporal tag = Temporal::kT1;
};

struct TemporalFused {
  std::array<Var, kFusedLevels> levels;
};

// Spatial-temporal fusion. With use_stam = false the module degrades to the
// ablation baseline: per-level channel concatenation of the two phases
// followed by a 1x1 convolution.
class Stam {
 public:
  Stam(const std::array<int64_t, kPyramidLevels>& channels, bool use_stam, ParamStore& ps, Rng& rng,
       const std::string& prefix = "stam");

  // Top-down: S_i = block(concat(F_i, upsample(F_{i+1}))).
  SpatialFused spatial_fuse(const VarPyramid& pyr, Temporal tag = Temporal::kT1) const;
  // S_i^out = block(concat(S_i^1, S_i^2)); channel order makes this asymmetric.
  TemporalFused temporal_fuse(const SpatialFused& a, const SpatialFused& b) const;

  TemporalFused operator()(const VarPyramid& p1, const VarPyramid& p2) const;
  bool enabled() const { return use_stam_; }

 private:
  bool use_stam_;
  std::array<ConvNormRelu, kFusedLevels> spatial_;
  std::array<ConvNormRelu, kFusedLevels> temporal_;
  std::array<Conv2d, kFusedLevels> baseline_;
};

// Top-down decoder over the fused levels: coarse-to-fine 2x bilinear
// upsampling, 1x1-projected skip added at each fused level, conv3x3 + ReLU
// per step, and a 1x1 sigmoid head at input resolution.
class Decoder {
 public:
  Decoder(const std::array<int64_t, kPyramidLevels>& channels, int64_t width, ParamStore& ps, Rng& rng,
          bool zero_head = true, const std::string& prefix = "decoder");

  // Returns scores [N, 1, H, W] in [0, 1].
  Var operator()(const TemporalFused& f) const;

 private:
  std::array<Conv2d, kFusedLevels> proj_;
  std::array<Conv2d, 4> refine_;
  Conv2d head_;
};

ChangeMap to_change_map(const Var& scores, int64_t sample, double threshold);

}  // namespace unicd
