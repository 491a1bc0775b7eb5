#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "unicd/data.hpp"
#include "unicd/encoder.hpp"
#include "unicd/metrics.hpp"
#include "unicd/spci.hpp"
#include "unicd/stam.hpp"
#include "unicd/weak.hpp"

namespace unicd {

inline constexpr int kCheckpointVersion = 1;

struct ModelOptions {
  EncoderSpec encoder{};
  int64_t decoder_width = 16;
};

void to_json(nlohmann::json& j, const ModelOptions& o);
void from_json(const nlohmann::json& j, ModelOptions& o);

// Shared encoder, fusion module, change decoder and image-level classifier.
// Parameters are created in a fixed order from a generator seeded by
// cfg.seed, so equal seeds give equal initial weights.
class Model {
 public:
  Model(const ModelOptions& opts, const RunConfig& cfg, std::shared_ptr<const FeatureSource> source = nullptr);

  struct Forward {
    VarPyramid p;  // [2N] batch: first N samples are t1, last N are t2
    VarPyramid p1;
    VarPyramid p2;
    TemporalFused fused;
  };

  // t1, t2: [N, C, H, W]; ids name the pairs.
  Forward forward(const Tensor& t1, const Tensor& t2, std::span<const std::string> ids) const;
  Var change_scores(const Forward& f) const { return (*decoder_)(f.fused); }
  Classifier::Output classify(const Forward& f) const { return (*classifier_)(f.fused); }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Encoder& encoder() const { return *encoder_; }
  const ModelOptions& options() const { return opts_; }

 private:
  ModelOptions opts_;
  ParamStore params_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Stam> stam_;
  std::unique_ptr<Decoder> decoder_;
  std::unique_ptr<Classifier> classifier_;
};

// [N, C, H, W] x 2 -> [2N, C, H, W] with t1 samples first.
Tensor stack_phases(const Tensor& t1, const Tensor& t2);
// Encoder input ids for a pair batch: "<id>_A"... followed by "<id>_B"...
std::vector<std::string> phase_ids(std::span<const std::string> ids);

struct TrainState {
  int64_t step = 0;
  int64_t epoch = 0;
  Mode mode = Mode::kSupervised;
  std::string param_snapshot_id;
  std::vector<double> loss_history;
};

// FNV-1a over parameter names and IEEE bytes, hex encoded.
std::string snapshot_id(const ParamStore& ps);

struct StepRecord {
  int64_t step = 0;
  int64_t epoch = 0;
  double loss = 0;
  nlohmann::json components;
  double lr = 0;
};

nlohmann::json to_json(const StepRecord& r);

struct TrainOptions {
  ModelOptions model{};
  // Called after every optimization step (e.g. to write JSON lines).
  std::function<void(const StepRecord&)> on_step;
  // Image-level labels for unsupervised runs; computed with SPCI when empty.
  std::optional<std::vector<int>> pseudo_labels;
};

struct TrainResult {
  TrainState state;
  std::unique_ptr<Model> model;
  std::vector<PseudoLabelPacket> pseudo;  // unsupervised mode only
};

// SPCI over a corpus produced by generate_synthetic (or laid out alike):
// features/, masks/ and embeddings.ucda next to A/ and B/.
std::vector<PseudoLabelPacket> pseudo_label_corpus(const Corpus& corpus, const RunConfig& cfg);

TrainResult train(Mode mode, const Corpus& corpus, const RunConfig& cfg, const TrainOptions& opts = {});

// One optimization step on a batch; returns the loss. Exposed for tests.
double train_step(Model& model, AdamW& opt, Mode mode, std::span<const Sample* const> batch,
                  std::span<const int> image_labels, const RunConfig& cfg, Rng& rng, nlohmann::json* components = nullptr);

// Scores and binary maps for one pair. Supervised checkpoints use the change
// decoder; weak and unsupervised ones gate the upsampled CAM with the image
// classifier: changed iff sigmoid(logit) > 0.5 and CAM > cfg.cam_threshold.
ChangeMap predict(const Model& model, Mode mode, const ImagePair& pair, const RunConfig& cfg);

struct EvalOptions {
  std::optional<std::filesystem::path> error_map_dir;
};

struct EvalResult {
  std::vector<NamedReport> per_image;
  ConfusionCounts total;
  MetricsReport aggregate;

  nlohmann::json to_json() const;
};

EvalResult evaluate(const Model& model, Mode mode, const Corpus& corpus, const RunConfig& cfg,
                    const EvalOptions& opts = {});

struct Checkpoint {
  std::unique_ptr<Model> model;
  Mode mode = Mode::kSupervised;
  RunConfig cfg;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, Mode mode, const RunConfig& cfg,
                     const TrainState& state);
// Throws kCheckpointVersionMismatch for foreign or incompatible archives.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::shared_ptr<const FeatureSource> source = nullptr);

}  // namespace unicd
