#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unicd/encoder.hpp"
#include "unicd/stam.hpp"
#include "unicd/transform.hpp"

namespace unicd {

struct CamOutput {
  Tensor cam;  // [h, w], min-max normalized; constant maps become all-zero
  double logit = 0;
  int scale = 1;  // 1-based pyramid level the CAM lives on
};

struct AnchorRegions {
  Tensor r_c;  // [h, w] in {0, 1}
  Tensor r_u;
  int64_t area_c = 0;
  int64_t area_u = 0;
};

// Min-max normalization to [0, 1]; a constant map maps to zeros.
Tensor normalize_cam(const Tensor& map);

// Image-level change classifier on the finest fused level. The class
// activation map is the classifier-weighted channel sum; the logit is its
// global average plus bias.
class Classifier {
 public:
  Classifier(int64_t in_channels, ParamStore& ps, Rng& rng, bool zero_init = true,
             const std::string& prefix = "classifier");

  struct Output {
    Var logits;     // [N]
    Var score_map;  // [N, 1, h, w], pre-sigmoid
    std::vector<CamOutput> cams;
  };

  Output operator()(const TemporalFused& f) const;

 private:
  Conv2d conv_;
};

// Single-sample convenience over a batch of one.
CamOutput classify(const Classifier& head, const TemporalFused& f);

// Binary cross-entropy on sigmoid(logit).
double cls_loss(double logit, int label);
// Mean BCE over the batch; labels in {0, 1}.
Var cls_loss(const Var& logits, std::span<const int> labels);

// Spatial coherency: mean |T^-1(phi(T(I))) - phi(I)| per level, averaged over
// levels. `base` may carry phi(I) when the caller already has it.
Var scr_loss(const Encoder& enc, const Var& images, std::span<const std::string> ids, const SpatialTransform& t,
             const std::optional<VarPyramid>& base = std::nullopt);
// Averaged over both temporal images of the pair.
double scr_loss(const ImagePair& p, const SpatialTransform& t, const Encoder& enc);

AnchorRegions anchors_from_map(const Tensor& map, double low, double high);
// r_c = cam >= cam_high, r_u = cam <= cam_low.
AnchorRegions extract_anchors(const CamOutput& cam, const RunConfig& cfg);
AnchorRegions all_unchanged_anchors(int64_t h, int64_t w);

// One level of the contrastive feature loss, averaged over the batch:
//   1 - |(f1 - f2) * R_c|_1 / (|R_c| + eps) + |(f1 - f2) * R_u|_1 / (|R_u| + eps)
// r_c / r_u are [N, 1, h, w] (or [h, w] for a batch of one) at the level's resolution.
Var cfr_level(const Var& f1, const Var& f2, const Tensor& r_c, const Tensor& r_u, double eps);

// Features are L2-normalized per pixel, anchors nearest-resized to each
// level; the result is the mean over the four levels.
Var cfr_loss(const VarPyramid& f1, const VarPyramid& f2, std::span<const AnchorRegions> anchors, const RunConfig& cfg);
double cfr_loss(const FeaturePyramid& f1, const FeaturePyramid& f2, const AnchorRegions& a, const RunConfig& cfg);

struct WeakParts {
  std::optional<Var> cls;
  std::optional<Var> sc;
  std::optional<Var> cf;
};

// Unweighted sum of the parts that are present.
Var weak_loss(const WeakParts& parts);
double weak_loss(double cls, double sc, double cf);

}  // namespace unicd
