#include "unicd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <fmt/format.h>

#include "unicd/archive.hpp"
#include "unicd/error.hpp"
#include "unicd/image_io.hpp"
#include "unicd/sup_loss.hpp"

namespace fs = std::filesystem;

namespace unicd {

void to_json(nlohmann::json& j, const ModelOptions& o) {
  j = {{"encoder", o.encoder}, {"decoder_width", o.decoder_width}};
}

void from_json(const nlohmann::json& j, ModelOptions& o) {
  if (j.contains("encoder")) o.encoder = j.at("encoder").get<EncoderSpec>();
  o.decoder_width = j.value("decoder_width", int64_t{16});
}

Model::Model(const ModelOptions& opts, const RunConfig& cfg, std::shared_ptr<const FeatureSource> source)
    : opts_(opts) {
  opts_.encoder.validate();
  if (opts_.decoder_width < 2) throw Error(ErrorCode::kInvalidConfig, "decoder_width must be at least 2");
  Rng rng(static_cast<uint64_t>(cfg.seed));
  const auto& ch = opts_.encoder.channels;
  encoder_ = make_encoder(opts_.encoder, params_, rng, std::move(source));
  stam_ = std::make_unique<Stam>(ch, cfg.use_stam, params_, rng);
  decoder_ = std::make_unique<Decoder>(ch, opts_.decoder_width, params_, rng);
  classifier_ = std::make_unique<Classifier>(ch[0], params_, rng);
}

Tensor stack_phases(const Tensor& t1, const Tensor& t2) {
  Tensor both({2 * t1.dim(0), t1.dim(1), t1.dim(2), t1.dim(3)});
  std::copy(t1.values().begin(), t1.values().end(), both.data());
  std::copy(t2.values().begin(), t2.values().end(), both.data() + t1.numel());
  return both;
}

std::vector<std::string> phase_ids(std::span<const std::string> ids) {
  std::vector<std::string> out;
  out.reserve(2 * ids.size());
  for (const auto& id : ids) out.push_back(id + "_A");
  for (const auto& id : ids) out.push_back(id + "_B");
  return out;
}

Model::Forward Model::forward(const Tensor& t1, const Tensor& t2, std::span<const std::string> ids) const {
  if (t1.shape() != t2.shape())
    throw Error(ErrorCode::kShapeMismatch, "forward: " + shape_str(t1.shape()) + " vs " + shape_str(t2.shape()));
  const auto pids = phase_ids(ids);
  Forward f;
  f.p = encoder_->forward(constant(stack_phases(t1, t2)), pids, std::nullopt);
  std::tie(f.p1, f.p2) = split_pyramid(f.p);
  f.fused = (*stam_)(f.p1, f.p2);
  return f;
}

std::string snapshot_id(const ParamStore& ps) {
  uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, v] : ps.all()) {
    feed(name.data(), name.size());
    feed(v.value().data(), static_cast<size_t>(v.value().numel()) * sizeof(double));
  }
  return fmt::format("{:016x}", h);
}

nlohmann::json to_json(const StepRecord& r) {
  return {{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss}, {"components", r.components}, {"lr", r.lr}};
}

std::vector<PseudoLabelPacket> pseudo_label_corpus(const Corpus& corpus, const RunConfig& cfg) {
  const ArchiveFeatureSource features(corpus.dir / "features");
  const EmbeddingFileBackend backend(corpus.dir / "embeddings.ucda");
  const Vocabulary vocab;
  std::vector<PseudoLabelPacket> out;
  out.reserve(corpus.samples.size());
  for (const auto& s : corpus.samples) {
    const InstanceMaskSet masks = load_instance_masks(corpus.dir, s.pair.id);
    FeaturePyramid f1 = features.raw(s.pair.id + "_A");
    FeaturePyramid f2 = features.raw(s.pair.id + "_B");
    f1.tag = Temporal::kT1;
    f2.tag = Temporal::kT2;
    out.push_back(run_spci(s.pair, masks, f1, f2, vocab, backend, cfg));
  }
  return out;
}

namespace {

struct Batch {
  Tensor t1, t2;
  std::vector<std::string> ids;
  std::vector<int> image_labels;
  std::vector<const Tensor*> priors;  // optional full-resolution anchor maps
};

Batch make_batch(std::span<const Sample* const> samples, std::span<const int> labels,
                 std::span<const Tensor* const> priors) {
  Batch b;
  std::vector<Tensor> a, c;
  for (const Sample* s : samples) {
    a.push_back(s->pair.t1);
    c.push_back(s->pair.t2);
    b.ids.push_back(s->pair.id);
  }
  b.t1 = stack_batch(a);
  b.t2 = stack_batch(c);
  b.image_labels.assign(labels.begin(), labels.end());
  b.priors.assign(priors.begin(), priors.end());
  b.priors.resize(samples.size(), nullptr);
  return b;
}

void check_finite(double v, const std::string& what, const nlohmann::json& components, int64_t step) {
  if (!std::isfinite(v))
    throw Error(ErrorCode::kNonFiniteLoss,
                fmt::format("{} is not finite at step {}; components {}", what, step, components.dump()));
}

double step_impl(Model& model, AdamW& opt, Mode mode, std::span<const Sample* const> samples, const Batch& b,
                 const RunConfig& cfg, Rng& rng, nlohmann::json& comp, bool crr = true) {
  model.params().zero_grad();
  const Model::Forward f = model.forward(b.t1, b.t2, b.ids);
  Var loss;
  if (mode == Mode::kSupervised) {
    std::vector<Tensor> labels;
    for (const Sample* s : samples) {
      if (!s->pixel) throw Error(ErrorCode::kModeLabelMismatch, s->pair.id + ": supervised mode needs pixel labels");
      labels.push_back(s->pixel->reshaped({1, s->pixel->dim(0), s->pixel->dim(1)}));
    }
    SupLoss sl = sup_loss(model.change_scores(f), stack_batch(labels));
    comp = {{"sup", sl.report.total}, {"unchanged", sl.report.unchanged_term}, {"changed", sl.report.changed_term}};
    loss = sl.total;
  } else {
    const Classifier::Output out = model.classify(f);
    WeakParts parts;
    parts.cls = cls_loss(out.logits, b.image_labels);
    comp["cls"] = parts.cls->value()[0];
    if (crr && cfg.use_scr) {
      const SpatialTransform t = SpatialTransform::sample(rng);
      const auto pids = phase_ids(b.ids);
      parts.sc = scr_loss(model.encoder(), constant(stack_phases(b.t1, b.t2)), pids, t, f.p);
      comp["scr"] = parts.sc->value()[0];
    }
    if (crr && cfg.use_cfr) {
      std::vector<AnchorRegions> anchors;
      const int64_t h = out.cams[0].cam.dim(0), w = out.cams[0].cam.dim(1);
      for (size_t i = 0; i < samples.size(); ++i) {
        if (b.image_labels[i] == 0) anchors.push_back(all_unchanged_anchors(h, w));
        else if (b.priors[i]) anchors.push_back(anchors_from_map(normalize_cam(*b.priors[i]), cfg.cam_low, cfg.cam_high));
        else if (out.cams[i].logit > 0) anchors.push_back(extract_anchors(out.cams[i], cfg));
        else anchors.push_back(AnchorRegions{Tensor({h, w}), Tensor({h, w}), 0, 0});
      }
      parts.cf = cfr_loss(f.p1, f.p2, anchors, cfg);
      comp["cfr"] = parts.cf->value()[0];
    }
    loss = weak_loss(parts);
    comp["weak"] = loss.value()[0];
  }
  const double value = loss.value()[0];
  check_finite(value, "loss", comp, opt.steps());
  backward(loss);
  opt.step(model.params());
  return value;
}

}  // namespace

double train_step(Model& model, AdamW& opt, Mode mode, std::span<const Sample* const> batch,
                  std::span<const int> image_labels, const RunConfig& cfg, Rng& rng, nlohmann::json* components) {
  nlohmann::json comp = nlohmann::json::object();
  const Batch b = make_batch(batch, image_labels, {});
  const double v = step_impl(model, opt, mode, batch, b, cfg, rng, comp);
  if (components) *components = std::move(comp);
  return v;
}

TrainResult train(Mode mode, const Corpus& corpus, const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (corpus.samples.empty()) throw Error(ErrorCode::kEmptyInput, "training corpus is empty");
  TrainResult result;
  std::shared_ptr<const FeatureSource> source;
  if (opts.model.encoder.backend == EncoderBackend::kFrozenFile)
    source = std::make_shared<ArchiveFeatureSource>(corpus.dir / "features");
  result.model = std::make_unique<Model>(opts.model, cfg, source);
  Model& model = *result.model;

  const size_t n = corpus.samples.size();
  std::vector<int> labels(n, 0);
  std::vector<const Tensor*> priors(n, nullptr);
  if (mode == Mode::kSupervised) {
    for (const auto& s : corpus.samples) label_set(s, mode);
  } else if (mode == Mode::kWeak) {
    for (size_t i = 0; i < n; ++i) labels[i] = *label_set(corpus.samples[i], mode).image_level;
  } else {
    if (opts.pseudo_labels) {
      if (opts.pseudo_labels->size() != n)
        throw Error(ErrorCode::kLengthMismatch, "pseudo label count differs from corpus size");
      labels = *opts.pseudo_labels;
    } else {
      result.pseudo = pseudo_label_corpus(corpus, cfg);
      for (size_t i = 0; i < n; ++i) {
        labels[i] = result.pseudo[i].image_label;
        if (cfg.v_anchor_prior) priors[i] = &result.pseudo[i].v_raw;
      }
    }
  }

  Rng rng(static_cast<uint64_t>(cfg.seed) ^ 0x5DEECE66DULL);
  Rng aug(static_cast<uint64_t>(cfg.seed) ^ 0x9E3779B97F4A7C15ULL);
  AdamW opt(cfg);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  TrainState& st = result.state;
  st.mode = mode;
  const auto bs = static_cast<size_t>(cfg.batch_size);
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < n; start += bs) {
      std::vector<const Sample*> batch;
      std::vector<int> blabels;
      std::vector<const Tensor*> bpriors;
      for (size_t k = start; k < std::min(n, start + bs); ++k) {
        batch.push_back(&corpus.samples[order[k]]);
        blabels.push_back(labels[order[k]]);
        bpriors.push_back(priors[order[k]]);
      }
      nlohmann::json comp = nlohmann::json::object();
      const Batch b = make_batch(batch, blabels, bpriors);
      const double loss = step_impl(model, opt, mode, batch, b, cfg, aug, comp, epoch >= cfg.crr_warmup);
      st.loss_history.push_back(loss);
      ++st.step;
      if (opts.on_step) opts.on_step(StepRecord{st.step, epoch, loss, comp, cfg.lr});
    }
    st.epoch = epoch + 1;
  }
  st.param_snapshot_id = snapshot_id(model.params());
  return result;
}

ChangeMap predict(const Model& model, Mode mode, const ImagePair& pair, const RunConfig& cfg) {
  validate_pair(pair);
  const Tensor t1 = pair.t1.reshaped({1, pair.channels(), pair.height(), pair.width()});
  const Tensor t2 = pair.t2.reshaped({1, pair.channels(), pair.height(), pair.width()});
  const std::array<std::string, 1> ids{pair.id};
  const Model::Forward f = model.forward(t1, t2, ids);
  if (mode == Mode::kSupervised) return to_change_map(model.change_scores(f), 0, cfg.threshold);
  const Classifier::Output out = model.classify(f);
  const CamOutput& cam = out.cams[0];
  const Tensor up = resize_bilinear(cam.cam.reshaped({1, 1, cam.cam.dim(0), cam.cam.dim(1)}), pair.height(),
                                    pair.width())
                        .reshaped({pair.height(), pair.width()});
  const bool changed = 1.0 / (1.0 + std::exp(-cam.logit)) > 0.5;
  ChangeMap m{Tensor({pair.height(), pair.width()}), cfg.cam_threshold};
  if (changed)
    for (int64_t i = 0; i < up.numel(); ++i) m.scores[i] = std::clamp(up[i], 0.0, 1.0);
  return m;
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& r : per_image)
    images.push_back({{"id", r.name}, {"counts", unicd::to_json(r.counts)}, {"metrics", unicd::to_json(metrics(r.counts))}});
  return {{"images", images}, {"total", unicd::to_json(total)}, {"aggregate", unicd::to_json(aggregate)}};
}

EvalResult evaluate(const Model& model, Mode mode, const Corpus& corpus, const RunConfig& cfg, const EvalOptions& opts) {
  if (!corpus.has_pixel_labels())
    throw Error(ErrorCode::kModeLabelMismatch, "evaluation needs pixel labels under " + (corpus.dir / "label").string());
  if (opts.error_map_dir) fs::create_directories(*opts.error_map_dir);
  EvalResult r;
  for (const auto& s : corpus.samples) {
    const Tensor pred = crop_to_original(predict(model, mode, s.pair, cfg).binary(), s.pair);
    const Tensor truth = crop_to_original(*s.pixel, s.pair);
    const ConfusionCounts c = confusion(pred, truth);
    r.per_image.push_back({s.pair.id, c});
    r.total += c;
    if (opts.error_map_dir) write_png(*opts.error_map_dir / (s.pair.id + ".png"), render_error_map(pred, truth));
  }
  r.aggregate = metrics(r.total);
  return r;
}

void save_checkpoint(const fs::path& path, const Model& model, Mode mode, const RunConfig& cfg,
                     const TrainState& state) {
  TensorArchive a;
  a.tensors = model.params().snapshot();
  a.meta = {{"format", "unicd-checkpoint"},
            {"version", kCheckpointVersion},
            {"mode", std::string(to_string(mode))},
            {"model", model.options()},
            {"run_config", cfg},
            {"state",
             {{"step", state.step},
              {"epoch", state.epoch},
              {"param_snapshot_id", snapshot_id(model.params())},
              {"loss_history", state.loss_history}}}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_archive(path, a, DType::kF64);
}

Checkpoint load_checkpoint(const fs::path& path, std::shared_ptr<const FeatureSource> source) {
  TensorArchive a = read_archive(path);
  const auto& m = a.meta;
  if (m.value("format", std::string()) != "unicd-checkpoint")
    throw Error(ErrorCode::kCheckpointVersionMismatch, path.string() + " is not a checkpoint");
  if (m.value("version", -1) != kCheckpointVersion)
    throw Error(ErrorCode::kCheckpointVersionMismatch,
                fmt::format("{}: version {} (expected {})", path.string(), m.value("version", -1), kCheckpointVersion));
  Checkpoint ck;
  try {
    ck.mode = parse_mode(m.at("mode").get<std::string>());
    ck.cfg = m.at("run_config").get<RunConfig>();
    const auto opts = m.at("model").get<ModelOptions>();
    ck.model = std::make_unique<Model>(opts, ck.cfg, std::move(source));
    const auto& s = m.at("state");
    ck.state.mode = ck.mode;
    ck.state.step = s.at("step").get<int64_t>();
    ck.state.epoch = s.at("epoch").get<int64_t>();
    ck.state.loss_history = s.at("loss_history").get<std::vector<double>>();
    ck.state.param_snapshot_id = s.at("param_snapshot_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCheckpointVersionMismatch, path.string() + ": malformed header: " + e.what());
  }
  ck.model->params().load_values(a.tensors);
  return ck;
}

}  // namespace unicd
