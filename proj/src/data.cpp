#include "unicd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <fmt/format.h>

#include "unicd/archive.hpp"
#include "unicd/autograd.hpp"
#include "unicd/encoder.hpp"
#include "unicd/error.hpp"
#include "unicd/image_io.hpp"

namespace fs = std::filesystem;

namespace unicd {

void CorpusSpec::validate() const {
  if (layout != "levir_style") throw Error(ErrorCode::kInvalidConfig, "unknown corpus layout '" + layout + "'");
  if (split != "train" && split != "val" && split != "test")
    throw Error(ErrorCode::kInvalidConfig, "split must be train, val or test");
  if (patch_size < 0 || patch_size % kMaxStride != 0)
    throw Error(ErrorCode::kInvalidConfig, "patch_size must be a non-negative multiple of 32");
}

bool Corpus::has_pixel_labels() const {
  return !samples.empty() && std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.pixel.has_value(); });
}

bool Corpus::has_image_labels() const {
  return !samples.empty() &&
         std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.image_level.has_value(); });
}

fs::path resolve_corpus_dir(const CorpusSpec& spec) {
  if (fs::is_directory(spec.root / spec.split / "A")) return spec.root / spec.split;
  return spec.root;
}

namespace {

std::vector<std::string> png_stems(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

Tensor binarize_label(const RawImage& img) {
  Tensor t({img.height, img.width});
  for (int64_t y = 0; y < img.height; ++y)
    for (int64_t x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        if (img.at(y, x, c) != 0) t.at(y, x) = 1.0;
  return t;
}

Tensor crop_chw(const Tensor& t, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  const int64_t c = t.dim(0), H = t.dim(1), W = t.dim(2);
  Tensor out({c, h, w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out[(k * h + y) * w + x] = t[(k * H + y0 + y) * W + x0 + x];
  return out;
}

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

}  // namespace

Corpus load_corpus(const CorpusSpec& spec) {
  spec.validate();
  Corpus corpus;
  corpus.dir = resolve_corpus_dir(spec);
  const fs::path a_dir = corpus.dir / "A", b_dir = corpus.dir / "B", l_dir = corpus.dir / "label";
  if (!fs::is_directory(a_dir) || !fs::is_directory(b_dir))
    throw Error(ErrorCode::kLayoutError, corpus.dir.string() + " lacks A/ and B/ subdirectories");
  const bool has_labels = fs::is_directory(l_dir);

  const auto a = png_stems(a_dir);
  const auto b = png_stems(b_dir);
  const std::set<std::string> a_set(a.begin(), a.end()), b_set(b.begin(), b.end());
  for (const auto& s : a)
    if (!b_set.count(s)) throw Error(ErrorCode::kMissingPair, "B/" + s + ".png missing for A/" + s + ".png");
  for (const auto& s : b)
    if (!a_set.count(s)) throw Error(ErrorCode::kMissingPair, "A/" + s + ".png missing for B/" + s + ".png");

  std::map<std::string, int> image_labels;
  if (fs::exists(corpus.dir / "image_labels.json")) {
    std::ifstream f(corpus.dir / "image_labels.json");
    nlohmann::json j;
    try {
      f >> j;
      image_labels = j.get<std::map<std::string, int>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kLayoutError, "image_labels.json: " + std::string(e.what()));
    }
  }

  for (const auto& stem : a) {
    ImagePair pair{png_to_tensor(read_png(a_dir / (stem + ".png"))), png_to_tensor(read_png(b_dir / (stem + ".png"))),
                   stem};
    if (pair.t1.shape() != pair.t2.shape())
      throw Error(ErrorCode::kLayoutError, stem + ": A and B differ in size or channel count");
    std::optional<Tensor> label;
    if (has_labels) {
      const fs::path lp = l_dir / (stem + ".png");
      if (!fs::exists(lp)) throw Error(ErrorCode::kMissingPair, "label/" + stem + ".png missing");
      label = binarize_label(read_png(lp));
      if (label->dim(0) != pair.height() || label->dim(1) != pair.width())
        throw Error(ErrorCode::kLayoutError, stem + ": label size differs from image size");
    }
    std::optional<int> image_level;
    if (auto it = image_labels.find(stem); it != image_labels.end()) image_level = it->second;

    const int64_t h = pair.height(), w = pair.width();
    const int64_t p = spec.patch_size;
    if (p == 0 || (h <= p && w <= p)) {
      Sample s{pad_to_stride(pair), std::nullopt, image_level, stem};
      if (label) {
        const ImagePair& pp = s.pair;
        s.pixel = reflect_pad(label->reshaped({1, h, w}), pp.height(), pp.width()).reshaped({pp.height(), pp.width()});
      }
      validate_pair(s.pair);
      corpus.samples.push_back(std::move(s));
      continue;
    }
    // Tile without overlap after reflect-padding up to a whole number of patches.
    const int64_t ph = round_up(h, p), pw = round_up(w, p);
    const Tensor t1 = reflect_pad(pair.t1, ph, pw), t2 = reflect_pad(pair.t2, ph, pw);
    const std::optional<Tensor> lab =
        label ? std::optional<Tensor>(reflect_pad(label->reshaped({1, h, w}), ph, pw)) : std::nullopt;
    for (int64_t r = 0; r < ph / p; ++r)
      for (int64_t c = 0; c < pw / p; ++c) {
        Sample s;
        s.source = stem;
        s.pair.id = fmt::format("{}_r{}_c{}", stem, r, c);
        s.pair.t1 = crop_chw(t1, r * p, c * p, p, p);
        s.pair.t2 = crop_chw(t2, r * p, c * p, p, p);
        if (lab) {
          s.pixel = crop_chw(*lab, r * p, c * p, p, p).reshaped({p, p});
          s.image_level = s.pixel->max() > 0 ? 1 : 0;
        } else {
          s.image_level = image_level;
        }
        validate_pair(s.pair);
        corpus.samples.push_back(std::move(s));
      }
  }
  if (corpus.samples.empty()) throw Error(ErrorCode::kEmptyInput, corpus.dir.string() + " holds no image pairs");
  return corpus;
}

LabelSet label_set(const Sample& s, Mode mode) {
  LabelSet l;
  l.mode = mode;
  if (mode == Mode::kSupervised) {
    if (!s.pixel) throw Error(ErrorCode::kModeLabelMismatch, s.pair.id + ": supervised mode needs pixel labels");
    l.pixel = s.pixel;
  } else if (mode == Mode::kWeak) {
    if (!s.image_level)
      throw Error(ErrorCode::kModeLabelMismatch, s.pair.id + ": weak mode needs an image-level label");
    l.image_level = s.image_level;
  }
  return l;
}

void SynthSpec::validate() const {
  if (size <= 0 || size % kMaxStride != 0) throw Error(ErrorCode::kInvalidConfig, "size must be a positive multiple of 32");
  if (n_pairs < 0 || n_test_pairs < 0) throw Error(ErrorCode::kInvalidConfig, "pair counts must be non-negative");
  if (change_min < 0 || change_max < change_min) throw Error(ErrorCode::kInvalidConfig, "bad change object range");
  if (persistent_min < 0 || persistent_max < persistent_min)
    throw Error(ErrorCode::kInvalidConfig, "bad persistent object range");
  if (illum_min < 0 || illum_max < illum_min) throw Error(ErrorCode::kInvalidConfig, "bad illumination range");
  if (noise_sigma < 0 || feature_noise < 0) throw Error(ErrorCode::kInvalidConfig, "noise must be non-negative");
  if (!(feature_level_decay > 0)) throw Error(ErrorCode::kInvalidConfig, "feature_level_decay must be positive");
  if (feature_channels < 6) throw Error(ErrorCode::kInvalidConfig, "feature_channels must be at least 6");
}

void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"n_pairs", s.n_pairs},
       {"n_test_pairs", s.n_test_pairs},
       {"size", s.size},
       {"change_min", s.change_min},
       {"change_max", s.change_max},
       {"persistent_min", s.persistent_min},
       {"persistent_max", s.persistent_max},
       {"illum_min", s.illum_min},
       {"illum_max", s.illum_max},
       {"noise_sigma", s.noise_sigma},
       {"season_texture", s.season_texture},
       {"seed", s.seed},
       {"feature_channels", s.feature_channels},
       {"feature_noise", s.feature_noise},
       {"feature_level_decay", s.feature_level_decay},
       {"oracle_fg_cos", s.oracle.fg_cos},
       {"oracle_bg_cos", s.oracle.bg_cos},
       {"oracle_jitter", s.oracle.jitter},
       {"oracle_dim", s.oracle.dim}};
}

void from_json(const nlohmann::json& j, SynthSpec& s) {
  nlohmann::json base;
  to_json(base, s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!base.contains(it.key())) throw Error(ErrorCode::kInvalidConfig, "unknown synth field '" + it.key() + "'");
    base[it.key()] = it.value();
  }
  try {
    s.n_pairs = base["n_pairs"].get<int64_t>();
    s.n_test_pairs = base["n_test_pairs"].get<int64_t>();
    s.size = base["size"].get<int64_t>();
    s.change_min = base["change_min"].get<int64_t>();
    s.change_max = base["change_max"].get<int64_t>();
    s.persistent_min = base["persistent_min"].get<int64_t>();
    s.persistent_max = base["persistent_max"].get<int64_t>();
    s.illum_min = base["illum_min"].get<double>();
    s.illum_max = base["illum_max"].get<double>();
    s.noise_sigma = base["noise_sigma"].get<double>();
    s.season_texture = base["season_texture"].get<bool>();
    s.seed = base["seed"].get<int64_t>();
    s.feature_channels = base["feature_channels"].get<int64_t>();
    s.feature_noise = base["feature_noise"].get<double>();
    s.feature_level_decay = base["feature_level_decay"].get<double>();
    s.oracle.fg_cos = base["oracle_fg_cos"].get<double>();
    s.oracle.bg_cos = base["oracle_bg_cos"].get<double>();
    s.oracle.jitter = base["oracle_jitter"].get<double>();
    s.oracle.dim = base["oracle_dim"].get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("synth spec: ") + e.what());
  }
}

void apply_override(SynthSpec& s, std::string_view key, std::string_view value) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  nlohmann::json v;
  try {
    v = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kInvalidConfig, "cannot parse value '" + std::string(value) + "' for " + k);
  }
  from_json(nlohmann::json{{k, v}}, s);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

enum Material : int { kGrass = 0, kVegetation = 1, kWitheredVegetation = 2, kBuilding = 3, kMaterials = 4 };

struct Rect {
  int64_t y0, x0, h, w;

  bool contains(int64_t y, int64_t x) const { return y >= y0 && y < y0 + h && x >= x0 && x < x0 + w; }
  bool overlaps(const Rect& o, int64_t gap) const {
    return y0 - gap < o.y0 + o.h && o.y0 - gap < y0 + h && x0 - gap < o.x0 + o.w && o.x0 - gap < x0 + w;
  }
};

struct Building {
  Rect r;
  std::array<double, 3> color;
  bool in_t1 = true;
  bool in_t2 = true;
};

struct Scene {
  std::string id;
  int64_t size = 0;
  Tensor texture;  // [3, H, W] background
  std::vector<Rect> vegetation;
  std::vector<Building> buildings;
  bool withered = false;  // vegetation appearance in t2
  double gain = 1.0;
  double offset = 0.0;
};

class SceneRng {
 public:
  explicit SceneRng(std::seed_seq& seq) : rng_(seq) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int64_t integer(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng_); }
  double normal(double sigma) { return sigma > 0 ? std::normal_distribution<double>(0.0, sigma)(rng_) : 0.0; }
  bool coin() { return integer(0, 1) == 1; }

 private:
  std::mt19937_64 rng_;
};

std::optional<Rect> place(SceneRng& rng, int64_t size, int64_t lo, int64_t hi, const std::vector<Rect>& taken) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    Rect r{0, 0, rng.integer(lo, hi), rng.integer(lo, hi)};
    r.y0 = rng.integer(1, size - r.h - 1);
    r.x0 = rng.integer(1, size - r.w - 1);
    if (std::none_of(taken.begin(), taken.end(), [&](const Rect& o) { return r.overlaps(o, 2); })) return r;
  }
  return std::nullopt;
}

Scene make_scene(const SynthSpec& spec, const std::string& id, SceneRng& rng) {
  Scene s;
  s.id = id;
  s.size = spec.size;
  const int64_t n = spec.size;
  const double fy = rng.uniform(0.05, 0.2), fx = rng.uniform(0.05, 0.2), ph = rng.uniform(0, 6.283);
  const std::array<double, 3> base{rng.uniform(0.30, 0.40), rng.uniform(0.50, 0.60), rng.uniform(0.25, 0.32)};
  s.texture = Tensor({3, n, n});
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      const double wave = 0.04 * std::sin(fy * static_cast<double>(y) + fx * static_cast<double>(x) + ph);
      const double grain = rng.uniform(-0.03, 0.03);
      for (int64_t c = 0; c < 3; ++c) s.texture[(c * n + y) * n + x] = base[static_cast<size_t>(c)] + wave + grain;
    }

  std::vector<Rect> taken;
  const int64_t lo = std::max<int64_t>(4, n * 3 / 16), hi = std::max<int64_t>(lo, n * 3 / 8);
  for (int64_t k = rng.integer(spec.persistent_min, spec.persistent_max); k > 0; --k)
    if (auto r = place(rng, n, lo, hi, taken)) {
      taken.push_back(*r);
      const double g = rng.uniform(0.55, 0.8);
      const std::array<double, 3> col =
          rng.coin() ? std::array<double, 3>{g, g, g + 0.03} : std::array<double, 3>{g + 0.1, g - 0.25, g - 0.3};
      s.buildings.push_back({*r, col, true, true});
    }
  for (int64_t k = rng.integer(spec.change_min, spec.change_max); k > 0; --k)
    if (auto r = place(rng, n, lo, hi, taken)) {
      taken.push_back(*r);
      const double g = rng.uniform(0.6, 0.85);
      const bool added = rng.coin();
      s.buildings.push_back({*r, {g, g, g + 0.03}, !added, added});
    }
  for (int64_t k = rng.integer(1, 2); k > 0; --k)
    if (auto r = place(rng, n, n / 8, n / 4, taken)) {
      taken.push_back(*r);
      s.vegetation.push_back(*r);
    }
  s.withered = spec.season_texture && rng.coin();
  const double shift = rng.uniform(spec.illum_min, spec.illum_max);
  s.gain = 1.0 + (rng.coin() ? shift : -shift);
  s.offset = rng.uniform(-0.5, 0.5) * shift * 0.2;
  return s;
}

// Per-pixel material and instance index for one phase.
struct PhaseMaps {
  std::vector<int> material;
  std::vector<int> instance;
};

PhaseMaps phase_maps(const Scene& s, Temporal t) {
  const int64_t n = s.size;
  PhaseMaps m{std::vector<int>(static_cast<size_t>(n * n), kGrass), std::vector<int>(static_cast<size_t>(n * n), 0)};
  int next = 1;
  for (const auto& b : s.buildings) {
    if (!(t == Temporal::kT1 ? b.in_t1 : b.in_t2)) continue;
    for (int64_t y = b.r.y0; y < b.r.y0 + b.r.h; ++y)
      for (int64_t x = b.r.x0; x < b.r.x0 + b.r.w; ++x) {
        m.material[static_cast<size_t>(y * n + x)] = kBuilding;
        m.instance[static_cast<size_t>(y * n + x)] = next;
      }
    ++next;
  }
  const int veg = (t == Temporal::kT2 && s.withered) ? kWitheredVegetation : kVegetation;
  for (const auto& r : s.vegetation) {
    for (int64_t y = r.y0; y < r.y0 + r.h; ++y)
      for (int64_t x = r.x0; x < r.x0 + r.w; ++x) {
        m.material[static_cast<size_t>(y * n + x)] = veg;
        m.instance[static_cast<size_t>(y * n + x)] = next;
      }
    ++next;
  }
  return m;
}

Tensor render(const Scene& s, Temporal t, const SynthSpec& spec, SceneRng& rng) {
  const int64_t n = s.size;
  Tensor img = s.texture;
  auto paint = [&](const Rect& r, const std::array<double, 3>& col, double grain) {
    for (int64_t y = r.y0; y < r.y0 + r.h; ++y)
      for (int64_t x = r.x0; x < r.x0 + r.w; ++x)
        for (int64_t c = 0; c < 3; ++c) img[(c * n + y) * n + x] = col[static_cast<size_t>(c)] + rng.uniform(-grain, grain);
  };
  const bool withered = t == Temporal::kT2 && s.withered;
  for (const auto& r : s.vegetation)
    paint(r, withered ? std::array<double, 3>{0.55, 0.48, 0.22} : std::array<double, 3>{0.12, 0.38, 0.12}, 0.04);
  for (const auto& b : s.buildings)
    if (t == Temporal::kT1 ? b.in_t1 : b.in_t2) paint(b.r, b.color, 0.02);
  for (auto& v : img.values()) {
    if (t == Temporal::kT2) v = v * s.gain + s.offset;
    v = std::clamp(v + rng.normal(spec.noise_sigma), 0.0, 1.0);
  }
  return img;
}

// Orthonormal material embeddings plus an illumination direction, shared by
// every scene of a corpus.
std::vector<std::vector<double>> material_basis(const SynthSpec& spec) {
  std::seed_seq seq{static_cast<uint64_t>(spec.seed), uint64_t{0xFEA7}};
  SceneRng rng(seq);
  const auto c = static_cast<size_t>(spec.feature_channels);
  std::vector<std::vector<double>> basis;
  while (basis.size() < kMaterials + 1) {
    std::vector<double> v(c);
    for (double& x : v) x = rng.normal(1.0);
    for (const auto& b : basis) {
      double dot = 0;
      for (size_t i = 0; i < c; ++i) dot += v[i] * b[i];
      for (size_t i = 0; i < c; ++i) v[i] -= dot * b[i];
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  // Withered vegetation stays close to vegetation.
  auto& w = basis[kWitheredVegetation];
  for (size_t i = 0; i < c; ++i) w[i] = 0.9 * basis[kVegetation][i] + 0.436 * w[i];
  return basis;
}

FeaturePyramid frozen_features(const Scene& s, Temporal t, const PhaseMaps& m,
                               const std::vector<std::vector<double>>& basis, const SynthSpec& spec, SceneRng& rng) {
  const int64_t n = s.size, c = spec.feature_channels;
  const double illum = t == Temporal::kT2 ? (s.gain - 1.0) : 0.0;
  Tensor dense({1, c, n, n});
  for (int64_t i = 0; i < n * n; ++i) {
    const auto& e = basis[static_cast<size_t>(m.material[static_cast<size_t>(i)])];
    for (int64_t k = 0; k < c; ++k)
      dense[k * n * n + i] = e[static_cast<size_t>(k)] + 0.5 * illum * basis[kMaterials][static_cast<size_t>(k)];
  }
  FeaturePyramid p;
  p.tag = t;
  Var x = avg_pool(constant(dense), 4);
  double weight = 1.0;
  for (int i = 0; i < kPyramidLevels; ++i) {
    if (i > 0) x = avg_pool(x, 2);
    Tensor lvl = x.value();
    for (auto& v : lvl.values()) v = static_cast<double>(static_cast<float>(weight * v + rng.normal(spec.feature_noise)));
    weight *= spec.feature_level_decay;
    p.levels[static_cast<size_t>(i)] = lvl.reshaped({c, lvl.dim(2), lvl.dim(3)});
  }
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    f << text;
    if (!f) throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "rename to " + path.string() + ": " + ec.message());
}

void generate_split(const SynthSpec& spec, const fs::path& dir, const std::string& split, int64_t count,
                    uint64_t split_tag, const std::vector<std::vector<double>>& basis) {
  for (const char* sub : {"A", "B", "label", "masks", "features"}) fs::create_directories(dir / sub);
  nlohmann::json image_labels = nlohmann::json::object();
  nlohmann::json instances = nlohmann::json::object();
  std::map<std::string, bool> is_fg;
  std::vector<std::string> mask_ids;

  for (int64_t i = 0; i < count; ++i) {
    const std::string id = fmt::format("{}_{:03d}", split, i);
    std::seed_seq seq{static_cast<uint64_t>(spec.seed), split_tag, static_cast<uint64_t>(i)};
    SceneRng rng(seq);
    const Scene scene = make_scene(spec, id, rng);
    const int64_t n = spec.size;

    Tensor label({n, n});
    for (const auto& b : scene.buildings)
      if (b.in_t1 != b.in_t2)
        for (int64_t y = b.r.y0; y < b.r.y0 + b.r.h; ++y)
          for (int64_t x = b.r.x0; x < b.r.x0 + b.r.w; ++x) label.at(y, x) = 1.0;

    write_png(dir / "A" / (id + ".png"), tensor_to_png(render(scene, Temporal::kT1, spec, rng)));
    write_png(dir / "B" / (id + ".png"), tensor_to_png(render(scene, Temporal::kT2, spec, rng)));
    write_png(dir / "label" / (id + ".png"), plane_to_png(label));
    image_labels[id] = label.max() > 0 ? 1 : 0;

    for (const Temporal t : {Temporal::kT1, Temporal::kT2}) {
      const std::string img_id = id + (t == Temporal::kT1 ? "_A" : "_B");
      const PhaseMaps m = phase_maps(scene, t);
      Tensor index({n, n});
      std::map<int, int> material_of;
      for (int64_t k = 0; k < n * n; ++k) {
        index[k] = m.instance[static_cast<size_t>(k)];
        if (m.instance[static_cast<size_t>(k)]) material_of[m.instance[static_cast<size_t>(k)]] = m.material[static_cast<size_t>(k)];
      }
      write_instance_masks(dir / "masks" / (img_id + ".png"), index);
      for (const auto& [k, mat] : material_of) {
        const std::string mid = img_id + "#" + std::to_string(k);
        is_fg[mid] = mat == kBuilding;
        instances[mid] = mat == kBuilding ? "building" : "vegetation";
        mask_ids.push_back(mid);
      }
      write_feature_archive(dir / "features" / (img_id + ".ucda"), frozen_features(scene, t, m, basis, spec, rng));
    }
  }
  write_text(dir / "image_labels.json", image_labels.dump(2) + "\n");
  write_text(dir / "instances.json", instances.dump(2) + "\n");
  const Vocabulary vocab;
  const SyntheticOracleBackend oracle(spec.oracle, vocab, is_fg);
  write_embedding_archive(dir / "embeddings.ucda", oracle, vocab, mask_ids);
}

}  // namespace

void generate_synthetic(const SynthSpec& spec, const fs::path& root) {
  spec.validate();
  const auto basis = material_basis(spec);
  generate_split(spec, root / "train", "train", spec.n_pairs, 1, basis);
  generate_split(spec, root / "test", "test", spec.n_test_pairs, 2, basis);
  nlohmann::json j;
  to_json(j, spec);
  write_text(root / "synth_spec.json", j.dump(2) + "\n");
}

InstanceMaskSet load_instance_masks(const fs::path& corpus_dir, const std::string& id) {
  const fs::path a = corpus_dir / "masks" / (id + "_A.png");
  const fs::path b = corpus_dir / "masks" / (id + "_B.png");
  if (!fs::exists(a) || !fs::exists(b))
    throw Error(ErrorCode::kBackendUnavailable, "no instance masks for '" + id + "' under " + (corpus_dir / "masks").string());
  InstanceMaskSet set = union_masks(read_instance_masks(a, id + "_A", Temporal::kT1),
                                    read_instance_masks(b, id + "_B", Temporal::kT2));
  set.source = MaskSource::kFile;
  return set;
}

}  // namespace unicd
