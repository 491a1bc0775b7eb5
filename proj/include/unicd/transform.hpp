#pragma once

#include <array>
#include <string_view>

#include "unicd/autograd.hpp"
#include "unicd/nn.hpp"

namespace unicd {

// Invertible spatial transform used by spatial coherency regularization.
// Every kind in the set is an involution.
class SpatialTransform {
 public:
  enum class Kind { kHFlip, kVFlip, kRot180 };

  explicit SpatialTransform(Kind k) : kind_(k) {}

  Kind kind() const { return kind_; }
  SpatialTransform inverse() const { return *this; }

  Tensor apply(const Tensor& x) const { return flip(x, horizontal(), vertical()); }
  Var apply(const Var& x) const { return flip(x, horizontal(), vertical()); }

  // Uniform over {hflip, vflip, rot180}.
  static SpatialTransform sample(Rng& rng);
  static constexpr std::array<Kind, 3> kAll = {Kind::kHFlip, Kind::kVFlip, Kind::kRot180};

  bool operator==(const SpatialTransform&) const = default;

 private:
  bool horizontal() const { return kind_ != Kind::kVFlip; }
  bool vertical() const { return kind_ != Kind::kHFlip; }

  Kind kind_;
};

std::string_view to_string(SpatialTransform::Kind k);

}  // namespace unicd
