#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "unicd/spci.hpp"
#include "unicd/types.hpp"

namespace unicd {

// A LEVIR-style directory: A/, B/ and optionally label/ with filename-aligned
// PNGs. If `root/<split>/A` exists the split subdirectory is used, otherwise
// `root` itself must hold the layout.
struct CorpusSpec {
  std::filesystem::path root;
  std::string split = "train";
  std::string layout = "levir_style";
  // Tile edge; 0 keeps whole images (reflect-padded to a stride-32 multiple).
  int64_t patch_size = 64;

  void validate() const;
};

struct Sample {
  ImagePair pair;
  std::optional<Tensor> pixel;     // [H, W] in {0, 1}
  std::optional<int> image_level;  // from image_labels.json, or derived from pixel truth of a tile
  std::string source;              // file stem the sample came from
};

struct Corpus {
  std::filesystem::path dir;  // resolved directory holding A/, B/, ...
  std::vector<Sample> samples;

  bool has_pixel_labels() const;
  bool has_image_labels() const;
};

Corpus load_corpus(const CorpusSpec& spec);
std::filesystem::path resolve_corpus_dir(const CorpusSpec& spec);

// Labels visible to a supervision mode; throws kModeLabelMismatch if absent.
LabelSet label_set(const Sample& s, Mode mode);

struct SynthSpec {
  int64_t n_pairs = 20;
  int64_t n_test_pairs = 10;
  int64_t size = 64;
  int64_t change_min = 0;  // added or removed buildings per pair
  int64_t change_max = 2;
  int64_t persistent_min = 1;
  int64_t persistent_max = 3;
  double illum_min = 0.0;  // |gain - 1| of the t2 illumination change
  double illum_max = 0.2;
  double noise_sigma = 0.02;
  bool season_texture = true;
  int64_t seed = 0;

  int64_t feature_channels = 16;
  double feature_noise = 0.03;
  // Magnitude ratio between consecutive levels of the frozen features.
  double feature_level_decay = 0.5;
  OracleParams oracle{};

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);
void apply_override(SynthSpec& s, std::string_view key, std::string_view value);

// Writes <root>/train and <root>/test, each with A/, B/, label/,
// image_labels.json, masks/<id>_{A,B}.png, instances.json, embeddings.ucda
// and features/<id>_{A,B}.ucda. Byte-identical for equal specs.
void generate_synthetic(const SynthSpec& spec, const std::filesystem::path& root);

// Instance masks of both phases of a sample, read from <dir>/masks.
InstanceMaskSet load_instance_masks(const std::filesystem::path& corpus_dir, const std::string& id);

}  // namespace unicd
