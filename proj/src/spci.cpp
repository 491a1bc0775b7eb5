#include "unicd/spci.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "unicd/archive.hpp"
#include "unicd/autograd.hpp"
#include "unicd/error.hpp"
#include "unicd/image_io.hpp"

namespace unicd {

InstanceMaskSet read_instance_masks(const std::filesystem::path& png, const std::string& image_id, Temporal phase) {
  const Tensor idx = png_to_plane(read_png(png));
  std::map<int, Tensor> by_index;
  for (int64_t i = 0; i < idx.numel(); ++i) {
    const int k = static_cast<int>(idx[i]);
    if (k == 0) continue;
    auto [it, _] = by_index.try_emplace(k, Tensor(idx.shape()));
    it->second[i] = 1.0;
  }
  InstanceMaskSet out;
  out.source = MaskSource::kFile;
  for (auto& [k, m] : by_index) out.masks.push_back({image_id + "#" + std::to_string(k), std::move(m), phase});
  return out;
}

void write_instance_masks(const std::filesystem::path& png, const Tensor& index_map) {
  RawImage img;
  img.channels = 1;
  img.height = index_map.dim(0);
  img.width = index_map.dim(1);
  img.pixels.resize(static_cast<size_t>(index_map.numel()));
  for (int64_t i = 0; i < index_map.numel(); ++i) {
    const double v = index_map[i];
    if (v < 0 || v > 255) throw Error(ErrorCode::kRangeError, "instance index out of 8-bit range");
    img.pixels[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  write_png(png, img);
}

InstanceMaskSet union_masks(const InstanceMaskSet& a, const InstanceMaskSet& b) {
  InstanceMaskSet out{a.masks, a.source};
  out.masks.insert(out.masks.end(), b.masks.begin(), b.masks.end());
  return out;
}

void Vocabulary::validate() const {
  if (foreground.empty() || background.empty())
    throw Error(ErrorCode::kInvalidConfig, "vocabularies must be non-empty");
  const std::set<std::string> fg(foreground.begin(), foreground.end());
  for (const auto& t : background)
    if (fg.count(t)) throw Error(ErrorCode::kInvalidConfig, "term '" + t + "' is in both vocabularies");
}

Embedding unit_normalize(Embedding v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0)
    for (double& x : v) x /= n;
  return v;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kLengthMismatch, "cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na < 1e-24 || nb < 1e-24) return 0.0;
  return dot / std::sqrt(na * nb);
}

EmbeddingFileBackend::EmbeddingFileBackend(const std::filesystem::path& archive) {
  if (!std::filesystem::exists(archive)) throw Error(ErrorCode::kEmbeddingMissing, "no embedding archive " + archive.string());
  TensorArchive a = read_archive(archive);
  for (auto& [name, t] : a.tensors) {
    Embedding e(t.values().begin(), t.values().end());
    if (name.rfind("text/", 0) == 0) text_.emplace(name.substr(5), unit_normalize(std::move(e)));
    else if (name.rfind("mask/", 0) == 0) mask_.emplace(name.substr(5), unit_normalize(std::move(e)));
  }
}

Embedding EmbeddingFileBackend::embed_image(const Tensor&, const std::string& mask_id) const {
  auto it = mask_.find(mask_id);
  if (it == mask_.end()) throw Error(ErrorCode::kEmbeddingMissing, "no embedding for mask '" + mask_id + "'");
  return it->second;
}

Embedding EmbeddingFileBackend::embed_text(const std::string& term) const {
  auto it = text_.find(term);
  if (it == text_.end()) throw Error(ErrorCode::kEmbeddingMissing, "no embedding for term '" + term + "'");
  return it->second;
}

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Weight of the class axis in text vectors.
constexpr double kTextClassWeight = 0.95;

}  // namespace

SyntheticOracleBackend::SyntheticOracleBackend(OracleParams params, Vocabulary vocab,
                                               std::map<std::string, bool> is_foreground)
    : params_(params), vocab_(std::move(vocab)), is_foreground_(std::move(is_foreground)) {
  vocab_.validate();
  const auto terms = static_cast<int64_t>(vocab_.foreground.size() + vocab_.background.size());
  if (params_.dim < terms + 3) throw Error(ErrorCode::kInvalidConfig, "oracle dimension too small for vocabulary");
  const double a = kTextClassWeight;
  if (std::pow((params_.fg_cos + params_.jitter) / a, 2) + std::pow((params_.bg_cos + params_.jitter) / a, 2) > 1.0)
    throw Error(ErrorCode::kInvalidConfig, "oracle cosines not realizable");
}

Embedding SyntheticOracleBackend::embed_text(const std::string& term) const {
  // Axis 0: foreground class, axis 1: background class, axes 2..: one per term.
  Embedding e(static_cast<size_t>(params_.dim), 0.0);
  const double b = std::sqrt(1.0 - kTextClassWeight * kTextClassWeight);
  size_t slot = 2;
  for (const auto& t : vocab_.foreground) {
    if (t == term) {
      e[0] = kTextClassWeight;
      e[slot] = b;
      return e;
    }
    ++slot;
  }
  for (const auto& t : vocab_.background) {
    if (t == term) {
      e[1] = kTextClassWeight;
      e[slot] = b;
      return e;
    }
    ++slot;
  }
  throw Error(ErrorCode::kEmbeddingMissing, "term '" + term + "' not in the oracle vocabulary");
}

Embedding SyntheticOracleBackend::embed_image(const Tensor&, const std::string& mask_id) const {
  auto it = is_foreground_.find(mask_id);
  if (it == is_foreground_.end()) throw Error(ErrorCode::kEmbeddingMissing, "oracle knows no mask '" + mask_id + "'");
  std::mt19937_64 rng(fnv1a(mask_id));
  std::uniform_real_distribution<double> jit(-params_.jitter, params_.jitter);
  const double same = (params_.fg_cos + jit(rng)) / kTextClassWeight;
  const double other = (params_.bg_cos + jit(rng)) / kTextClassWeight;
  Embedding e(static_cast<size_t>(params_.dim), 0.0);
  e[it->second ? 0 : 1] = same;
  e[it->second ? 1 : 0] = other;
  // Remaining mass goes to a random direction orthogonal to the class and term axes.
  const size_t first_free = 2 + vocab_.foreground.size() + vocab_.background.size();
  std::normal_distribution<double> gauss(0.0, 1.0);
  Embedding noise(static_cast<size_t>(params_.dim) - first_free);
  for (double& v : noise) v = gauss(rng);
  noise = unit_normalize(std::move(noise));
  const double rest = std::sqrt(std::max(0.0, 1.0 - same * same - other * other));
  for (size_t i = 0; i < noise.size(); ++i) e[first_free + i] = rest * noise[i];
  return unit_normalize(std::move(e));
}

void write_embedding_archive(const std::filesystem::path& path, const SimilarityBackend& be, const Vocabulary& vocab,
                             const std::vector<std::string>& mask_ids) {
  TensorArchive a;
  a.meta = {{"kind", "embeddings"}, {"foreground", vocab.foreground}, {"background", vocab.background}};
  auto put = [&](const std::string& name, const Embedding& e) {
    a.tensors.emplace(name, Tensor({static_cast<int64_t>(e.size())}, e));
  };
  for (const auto& t : vocab.foreground) put("text/" + t, be.embed_text(t));
  for (const auto& t : vocab.background) put("text/" + t, be.embed_text(t));
  for (const auto& m : mask_ids) put("mask/" + m, be.embed_image(Tensor(), m));
  write_archive(path, a, DType::kF64);
}

double foreground_prob(std::span<const double> fg_cos, std::span<const double> bg_cos) {
  // Shift by the max cosine for stability; it cancels in the ratio.
  double mx = -2.0;
  for (double c : fg_cos) mx = std::max(mx, c);
  for (double c : bg_cos) mx = std::max(mx, c);
  double num = 0, den = 0;
  for (double c : fg_cos) num += std::exp(c - mx);
  den = num;
  for (double c : bg_cos) den += std::exp(c - mx);
  return num / den;
}

double foreground_prob(const Tensor& mask, const Tensor& image, const Vocabulary& vocab, const SimilarityBackend& be,
                       const std::string& mask_id) {
  vocab.validate();
  const int64_t hw = mask.numel();
  if (image.numel() % hw != 0) throw Error(ErrorCode::kShapeMismatch, "foreground_prob: image/mask size mismatch");
  if (mask.sum() <= 0) throw Error(ErrorCode::kEmptyInput, "foreground_prob: empty mask '" + mask_id + "'");
  Tensor masked = image;
  for (int64_t i = 0; i < masked.numel(); ++i) masked[i] *= mask[i % hw];
  const Embedding x = be.embed_image(masked, mask_id);
  std::vector<double> fg, bg;
  for (const auto& t : vocab.foreground) fg.push_back(cosine(x, be.embed_text(t)));
  for (const auto& t : vocab.background) bg.push_back(cosine(x, be.embed_text(t)));
  return foreground_prob(fg, bg);
}

Tensor saliency_map(const InstanceMaskSet& masks, std::span<const double> probs, int64_t h, int64_t w) {
  if (masks.masks.size() != probs.size())
    throw Error(ErrorCode::kLengthMismatch, "saliency_map: " + std::to_string(masks.masks.size()) + " masks vs " +
                                                std::to_string(probs.size()) + " scores");
  Tensor f({h, w});
  for (size_t j = 0; j < probs.size(); ++j) {
    const Tensor& m = masks.masks[j].mask;
    if (m.numel() != h * w) throw Error(ErrorCode::kShapeMismatch, "saliency_map: mask size");
    for (int64_t i = 0; i < m.numel(); ++i)
      if (m[i] > 0) f[i] = std::max(f[i], probs[j]);
  }
  return f;
}

namespace {

Tensor fused_features(const FeaturePyramid& p) {
  const Tensor& l1 = p.levels[0];
  const int64_t h = l1.dim(1), w = l1.dim(2);
  std::vector<Var> parts;
  for (const auto& lvl : p.levels)
    parts.push_back(constant(resize_bilinear(lvl.reshaped({1, lvl.dim(0), lvl.dim(1), lvl.dim(2)}), h, w)));
  return concat_channels(parts).value();
}

}  // namespace

Tensor distance_map(const FeaturePyramid& f1, const FeaturePyramid& f2, int64_t out_h, int64_t out_w) {
  for (size_t i = 0; i < f1.levels.size(); ++i)
    if (f1.levels[i].shape() != f2.levels[i].shape())
      throw Error(ErrorCode::kShapeMismatch, "distance_map: level " + std::to_string(i + 1) + " shapes differ");
  const Tensor a = fused_features(f1);
  const Tensor b = fused_features(f2);
  const int64_t c = a.dim(1), h = a.dim(2), w = a.dim(3), hw = h * w;
  Tensor d({1, 1, h, w});
  for (int64_t i = 0; i < hw; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (int64_t k = 0; k < c; ++k) {
      const double x = a[k * hw + i], y = b[k * hw + i];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    const double norm = std::sqrt(na) * std::sqrt(nb);
    d[i] = (std::sqrt(na) < 1e-12 || std::sqrt(nb) < 1e-12) ? 0.0 : 1.0 - dot / norm;
  }
  return resize_bilinear(d, out_h, out_w).reshaped({out_h, out_w});
}

PseudoLabelPacket compose_pseudo(const Tensor& f_f, const Tensor& d, const RunConfig& cfg) {
  if (f_f.shape() != d.shape())
    throw Error(ErrorCode::kShapeMismatch, "compose_pseudo: " + shape_str(f_f.shape()) + " vs " + shape_str(d.shape()));
  PseudoLabelPacket p;
  p.f_f = f_f;
  p.d = d;
  p.v_raw = Tensor(f_f.shape());
  int64_t changed = 0;
  for (int64_t i = 0; i < f_f.numel(); ++i) {
    p.v_raw[i] = f_f[i] * d[i];
    if (p.v_raw[i] > cfg.v_binarize) ++changed;
  }
  p.v = minmax_normalize(p.v_raw);
  p.changed_fraction = f_f.numel() ? static_cast<double>(changed) / static_cast<double>(f_f.numel()) : 0.0;
  p.image_label = p.changed_fraction >= cfg.v_image_frac ? 1 : 0;
  return p;
}

double pseudo_label_quality(std::span<const int> labels, std::span<const int> truth) {
  if (labels.size() != truth.size())
    throw Error(ErrorCode::kLengthMismatch, "pseudo_label_quality: " + std::to_string(labels.size()) + " labels vs " +
                                                std::to_string(truth.size()) + " truths");
  if (labels.empty()) throw Error(ErrorCode::kEmptyInput, "pseudo_label_quality of nothing");
  size_t correct = 0;
  for (size_t i = 0; i < labels.size(); ++i) correct += labels[i] == truth[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double pseudo_label_quality(std::span<const PseudoLabelPacket> packets, std::span<const int> truth) {
  std::vector<int> labels;
  for (const auto& p : packets) labels.push_back(p.image_label);
  return pseudo_label_quality(labels, truth);
}

PseudoLabelPacket run_spci(const ImagePair& pair, const InstanceMaskSet& masks, const FeaturePyramid& f1,
                           const FeaturePyramid& f2, const Vocabulary& vocab, const SimilarityBackend& be,
                           const RunConfig& cfg) {
  std::vector<double> probs;
  probs.reserve(masks.masks.size());
  for (const auto& m : masks.masks) {
    const Tensor& img = m.phase == Temporal::kT1 ? pair.t1 : pair.t2;
    probs.push_back(foreground_prob(m.mask, img, vocab, be, m.id));
  }
  const Tensor f_f = saliency_map(masks, probs, pair.height(), pair.width());
  const Tensor d = distance_map(f1, f2, pair.height(), pair.width());
  PseudoLabelPacket p = compose_pseudo(f_f, d, cfg);
  p.id = pair.id;
  return p;
}

nlohmann::json packet_record(const PseudoLabelPacket& p) {
  return {{"id", p.id}, {"changed_fraction", p.changed_fraction}, {"image_label", p.image_label}};
}

}  // namespace unicd
