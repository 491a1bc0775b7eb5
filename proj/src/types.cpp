#include "unicd/types.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "unicd/error.hpp"

namespace unicd {

ImagePair validate_pair(const ImagePair& p) {
  if (p.t1.rank() != 3 || p.t1.shape() != p.t2.shape())
    throw Error(ErrorCode::kShapeMismatch,
                "pair '" + p.id + "': " + shape_str(p.t1.shape()) + " vs " + shape_str(p.t2.shape()));
  if (p.height() % kMaxStride != 0 || p.width() % kMaxStride != 0)
    throw Error(ErrorCode::kStrideError, "pair '" + p.id + "': " + std::to_string(p.height()) + "x" +
                                             std::to_string(p.width()) + " not divisible by 32");
  for (const Tensor* t : {&p.t1, &p.t2}) {
    for (double v : t->values())
      if (!(v >= 0.0 && v <= 1.0))
        throw Error(ErrorCode::kRangeError, "pair '" + p.id + "': value " + std::to_string(v) + " outside [0,1]");
  }
  return p;
}

namespace {
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
int64_t round_up(int64_t v) { return (v + kMaxStride - 1) / kMaxStride * kMaxStride; }
}  // namespace

Tensor reflect_pad(const Tensor& chw, int64_t out_h, int64_t out_w) {
  const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor out({c, out_h, out_w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < out_h; ++y)
      for (int64_t x = 0; x < out_w; ++x)
        out[(k * out_h + y) * out_w + x] = chw[(k * h + reflect_index(y, h)) * w + reflect_index(x, w)];
  return out;
}

ImagePair pad_to_stride(ImagePair p) {
  const int64_t h = p.height(), w = p.width();
  const int64_t ph = round_up(h), pw = round_up(w);
  if (ph == h && pw == w) return p;
  p.orig_h = h;
  p.orig_w = w;
  p.t1 = reflect_pad(p.t1, ph, pw);
  p.t2 = reflect_pad(p.t2, ph, pw);
  return p;
}

Tensor crop_to_original(const Tensor& hw, const ImagePair& p) {
  if (p.orig_h == 0) return hw;
  Tensor out({p.orig_h, p.orig_w});
  for (int64_t y = 0; y < p.orig_h; ++y)
    for (int64_t x = 0; x < p.orig_w; ++x) out.at(y, x) = hw.at(y, x);
  return out;
}

bool FeaturePyramid::all_finite() const {
  return std::all_of(levels.begin(), levels.end(), [](const Tensor& t) { return t.all_finite(); });
}

Tensor ChangeMap::binary() const {
  Tensor out(scores.shape());
  for (int64_t i = 0; i < scores.numel(); ++i) out[i] = scores[i] > threshold ? 1.0 : 0.0;
  return out;
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kSupervised: return "supervised";
    case Mode::kWeak: return "weak";
    case Mode::kUnsupervised: return "unsupervised";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  if (s == "supervised") return Mode::kSupervised;
  if (s == "weak") return Mode::kWeak;
  if (s == "unsupervised") return Mode::kUnsupervised;
  throw Error(ErrorCode::kInvalidConfig, "unknown mode '" + std::string(s) + "'");
}

bool LabelSet::consistent() const {
  switch (mode) {
    case Mode::kSupervised: return pixel.has_value();
    case Mode::kWeak: return image_level.has_value();
    case Mode::kUnsupervised: return !pixel && !image_level;
  }
  return false;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kInvalidConfig, m); };
  if (!(epsilon > 0)) fail("epsilon must be > 0");
  if (!(0.0 <= cam_low && cam_low < cam_high && cam_high <= 1.0)) fail("need 0 <= cam_low < cam_high <= 1");
  if (optimizer != "adamw") fail("optimizer must be 'adamw'");
  if (!(lr >= 0)) fail("lr must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (epochs < 0) fail("epochs must be >= 0");
  if (crr_warmup < 0) fail("crr_warmup must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must lie in [0, 1)");
}

const std::vector<ConfigField>& run_config_fields() {
  static const std::vector<ConfigField> fields = {
      {"epsilon", "denominator guard in the contrastive feature loss", &RunConfig::epsilon},
      {"lr", "AdamW learning rate", &RunConfig::lr},
      {"optimizer", "optimizer name (adamw)", &RunConfig::optimizer},
      {"seed", "seed for all randomness", &RunConfig::seed},
      {"cam_low", "CAM value at or below which a pixel is an unchanged anchor", &RunConfig::cam_low},
      {"cam_high", "CAM value at or above which a pixel is a changed anchor", &RunConfig::cam_high},
      {"v_binarize", "pseudo-map threshold for counting changed pixels", &RunConfig::v_binarize},
      {"v_image_frac", "changed-pixel fraction that makes an image-level pseudo label 1", &RunConfig::v_image_frac},
      {"beta1", "AdamW first-moment decay", &RunConfig::beta1},
      {"beta2", "AdamW second-moment decay", &RunConfig::beta2},
      {"weight_decay", "AdamW decoupled weight decay", &RunConfig::weight_decay},
      {"adam_eps", "AdamW denominator epsilon", &RunConfig::adam_eps},
      {"epochs", "training epochs", &RunConfig::epochs},
      {"batch_size", "pairs per optimization step", &RunConfig::batch_size},
      {"threshold", "change-score binarization threshold (strict >)", &RunConfig::threshold},
      {"cam_threshold", "normalized-CAM threshold for weak-mode change maps", &RunConfig::cam_threshold},
      {"use_stam", "spatial-temporal fusion (false: concat + 1x1 conv baseline)", &RunConfig::use_stam},
      {"use_scr", "spatial coherency regularization in weak mode", &RunConfig::use_scr},
      {"use_cfr", "contrastive feature regularization in weak mode", &RunConfig::use_cfr},
      {"v_anchor_prior", "unsupervised mode: take CFR anchors from the pseudo map instead of the CAM",
       &RunConfig::v_anchor_prior},
      {"crr_warmup", "weak-mode epochs trained on the classification loss alone before SCR and CFR join",
       &RunConfig::crr_warmup},
  };
  return fields;
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
  for (const auto& f : run_config_fields())
    std::visit([&](auto member) { j[std::string(f.name)] = c.*member; }, f.member);
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "run config must be a JSON object");
  const auto& fields = run_config_fields();
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.name == key; });
    if (it == fields.end()) throw Error(ErrorCode::kInvalidConfig, "unknown config field '" + key + "'");
    try {
      std::visit(
          [&](auto member) {
            using T = std::remove_reference_t<decltype(c.*member)>;
            c.*member = value.get<T>();
          },
          it->member);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig, "field '" + key + "': " + e.what());
    }
  }
}

void apply_override(RunConfig& c, std::string_view key, std::string_view value) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  const auto& fields = run_config_fields();
  auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.name == k; });
  if (it == fields.end()) throw Error(ErrorCode::kInvalidConfig, "unknown config field '" + k + "'");
  const std::string v(value);
  auto bad = [&] { throw Error(ErrorCode::kInvalidConfig, "bad value '" + v + "' for '" + k + "'"); };
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, std::string>) {
          c.*member = v;
        } else if constexpr (std::is_same_v<T, bool>) {
          if (v == "true" || v == "1") c.*member = true;
          else if (v == "false" || v == "0") c.*member = false;
          else bad();
        } else if constexpr (std::is_same_v<T, int64_t>) {
          T out{};
          auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
          if (ec != std::errc() || p != v.data() + v.size()) bad();
          c.*member = out;
        } else {
          try {
            size_t pos = 0;
            double out = std::stod(v, &pos);
            if (pos != v.size()) bad();
            c.*member = out;
          } catch (const std::logic_error&) {
            bad();
          }
        }
      },
      it->member);
}

}  // namespace unicd
