#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "unicd/types.hpp"

namespace unicd {

enum class MaskSource { kFile, kSyntheticOracle };

struct InstanceMask {
  std::string id;  // "<image id>#<index>"
  Tensor mask;     // [H, W] in {0, 1}, non-empty
  Temporal phase = Temporal::kT1;  // image the instance was extracted from
};

struct InstanceMaskSet {
  std::vector<InstanceMask> masks;
  MaskSource source = MaskSource::kFile;
};

// Reads an 8-bit index PNG (0 = no instance, k > 0 = instance k) into one
// binary mask per present index. Mask ids are "<image_id>#<k>".
InstanceMaskSet read_instance_masks(const std::filesystem::path& png, const std::string& image_id,
                                    Temporal phase = Temporal::kT1);
void write_instance_masks(const std::filesystem::path& png, const Tensor& index_map);
// Concatenates the instance lists of both temporal images.
InstanceMaskSet union_masks(const InstanceMaskSet& a, const InstanceMaskSet& b);

struct Vocabulary {
  std::vector<std::string> foreground{"building", "house", "road", "construction"};
  std::vector<std::string> background{"vegetation", "bare land", "water", "shadow"};

  void validate() const;
};

using Embedding = std::vector<double>;

Embedding unit_normalize(Embedding v);
double cosine(std::span<const double> a, std::span<const double> b);

// Vision-language embedding provider. Outputs are unit-L2-normalized.
class SimilarityBackend {
 public:
  virtual ~SimilarityBackend() = default;
  virtual Embedding embed_image(const Tensor& masked_image, const std::string& mask_id) const = 0;
  virtual Embedding embed_text(const std::string& term) const = 0;
};

// Archive with tensors "text/<term>" and "mask/<mask id>".
class EmbeddingFileBackend final : public SimilarityBackend {
 public:
  explicit EmbeddingFileBackend(const std::filesystem::path& archive);
  Embedding embed_image(const Tensor& masked_image, const std::string& mask_id) const override;
  Embedding embed_text(const std::string& term) const override;

 private:
  std::map<std::string, Embedding> text_;
  std::map<std::string, Embedding> mask_;
};

struct OracleParams {
  int64_t dim = 32;
  double fg_cos = 0.8;  // target cosine of a foreground instance to every foreground term
  double bg_cos = 0.2;  // ... and to every background term (mirrored for background instances)
  double jitter = 0.0;  // per-instance deviation of those cosines, uniform in [-jitter, jitter]
};

// Deterministic stand-in for a vision-language model. Text vectors are
//   t = a * e_class + b * e_term,
// and an instance of semantic class k gets cos(x, t) = fg_cos for terms of
// class k and bg_cos for the other class, plus FNV-1a-seeded jitter.
class SyntheticOracleBackend final : public SimilarityBackend {
 public:
  SyntheticOracleBackend(OracleParams params, Vocabulary vocab, std::map<std::string, bool> is_foreground);

  Embedding embed_image(const Tensor& masked_image, const std::string& mask_id) const override;
  Embedding embed_text(const std::string& term) const override;

 private:
  OracleParams params_;
  Vocabulary vocab_;
  std::map<std::string, bool> is_foreground_;
};

// Writes every text term and every known mask id of `be` into an archive
// readable by EmbeddingFileBackend.
void write_embedding_archive(const std::filesystem::path& path, const SimilarityBackend& be, const Vocabulary& vocab,
                             const std::vector<std::string>& mask_ids);

// P(m) = sum_{fg} exp(cos(E_i(I*m), E_t(t))) / sum_{fg u bg} exp(cos(...)), temperature 1.
double foreground_prob(const Tensor& mask, const Tensor& image, const Vocabulary& vocab, const SimilarityBackend& be,
                       const std::string& mask_id);
double foreground_prob(std::span<const double> fg_cos, std::span<const double> bg_cos);

// F_f(x) = max P(m_j) over masks covering x, 0 elsewhere.
Tensor saliency_map(const InstanceMaskSet& masks, std::span<const double> probs, int64_t h, int64_t w);

// Levels upsampled to level-1 resolution and concatenated per phase;
// D = 1 - cos per pixel (0 where either vector is ~0), resized to (out_h, out_w).
Tensor distance_map(const FeaturePyramid& f1, const FeaturePyramid& f2, int64_t out_h, int64_t out_w);

struct PseudoLabelPacket {
  std::string id;
  Tensor f_f;
  Tensor d;
  Tensor v_raw;  // f_f * d
  Tensor v;      // min-max normalized v_raw
  int image_label = 0;
  double changed_fraction = 0;
};

// changed_fraction counts pixels with v_raw > v_binarize; image_label = 1 iff
// changed_fraction >= v_image_frac.
PseudoLabelPacket compose_pseudo(const Tensor& f_f, const Tensor& d, const RunConfig& cfg);

double pseudo_label_quality(std::span<const PseudoLabelPacket> packets, std::span<const int> truth);
double pseudo_label_quality(std::span<const int> labels, std::span<const int> truth);

// Full SPCI pass for one pair: score every instance, build F_f and D, compose V.
PseudoLabelPacket run_spci(const ImagePair& pair, const InstanceMaskSet& masks, const FeaturePyramid& f1,
                           const FeaturePyramid& f2, const Vocabulary& vocab, const SimilarityBackend& be,
                           const RunConfig& cfg);

nlohmann::json packet_record(const PseudoLabelPacket& p);

}  // namespace unicd
