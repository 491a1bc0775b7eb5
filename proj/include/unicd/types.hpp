#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "unicd/tensor.hpp"

namespace unicd {

inline constexpr int kPyramidLevels = 4;
inline constexpr int64_t kMaxStride = 32;

enum class Temporal { kT1, kT2 };

// Co-registered bi-temporal pair; t1/t2 are [C, H, W] in [0, 1].
struct ImagePair {
  Tensor t1;
  Tensor t2;
  std::string id;
  // Size before reflective padding to a stride-32 multiple; 0 means unpadded.
  int64_t orig_h = 0;
  int64_t orig_w = 0;

  int64_t channels() const { return t1.dim(0); }
  int64_t height() const { return t1.dim(1); }
  int64_t width() const { return t1.dim(2); }
};

ImagePair validate_pair(const ImagePair& p);

// Reflect-pads both images up to the next multiple of 32 and records the
// original size in orig_h / orig_w.
ImagePair pad_to_stride(ImagePair p);
Tensor reflect_pad(const Tensor& chw, int64_t out_h, int64_t out_w);
// Crop an [H, W] map back to the recorded original size.
Tensor crop_to_original(const Tensor& hw, const ImagePair& p);

// Level i (0-based) has stride 4 * 2^i relative to the input.
struct FeaturePyramid {
  std::array<Tensor, kPyramidLevels> levels;
  Temporal tag = Temporal::kT1;

  bool all_finite() const;
};

inline int64_t level_stride(int level) { return int64_t{4} << level; }

struct ChangeMap {
  Tensor scores;  // [H, W] in [0, 1]
  double threshold = 0.5;

  // Strict comparison: scores == threshold is unchanged.
  Tensor binary() const;
};

enum class Mode { kSupervised, kWeak, kUnsupervised };
std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct LabelSet {
  Mode mode = Mode::kUnsupervised;
  std::optional<Tensor> pixel;    // [H, W] in {0, 1}
  std::optional<int> image_level;

  bool consistent() const;
};

struct RunConfig {
  double epsilon = 1e-6;
  double lr = 1e-4;
  std::string optimizer = "adamw";
  int64_t seed = 0;
  double cam_low = 0.3;
  double cam_high = 0.7;
  double v_binarize = 0.5;
  double v_image_frac = 1e-3;

  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  double adam_eps = 1e-8;
  int64_t epochs = 30;
  int64_t batch_size = 4;
  double threshold = 0.5;
  double cam_threshold = 0.5;
  bool use_stam = true;
  bool use_scr = true;
  bool use_cfr = true;
  bool v_anchor_prior = false;
  int64_t crr_warmup = 0;  // weak-mode epochs trained on L_cls alone before SCR/CFR join

  void validate() const;
};

// Reflection table over RunConfig. Drives JSON I/O, CLI flags and
// key=value overrides so that every field is reachable from every surface.
struct ConfigField {
  std::string_view name;
  std::string_view help;
  std::variant<double RunConfig::*, int64_t RunConfig::*, bool RunConfig::*, std::string RunConfig::*> member;
};
const std::vector<ConfigField>& run_config_fields();

void to_json(nlohmann::json& j, const RunConfig& c);
// Unknown keys are rejected with kInvalidConfig.
void from_json(const nlohmann::json& j, RunConfig& c);
void apply_override(RunConfig& c, std::string_view key, std::string_view value);

}  // namespace unicd
