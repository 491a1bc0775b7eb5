#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "unicd/archive.hpp"
#include "unicd/trainer.hpp"
#include "test_util.hpp"

using namespace unicd;
using unicd::testing::code_of;
using unicd::testing::temp_dir;
using unicd::testing::uniform;
namespace fs = std::filesystem;

namespace {

ModelOptions small_model() {
  ModelOptions o;
  o.encoder.channels = {4, 8, 12, 16};
  o.decoder_width = 8;
  return o;
}

Sample make_sample(const std::string& id, uint64_t seed, bool identical, bool changed) {
  std::mt19937_64 g(seed);
  Sample s;
  s.pair.id = id;
  s.pair.t1 = uniform({3, 32, 32}, g, 0.0, 1.0);
  s.pair.t2 = identical ? s.pair.t1 : uniform({3, 32, 32}, g, 0.0, 1.0);
  s.pixel = Tensor({32, 32});
  if (changed)
    for (int64_t y = 8; y < 20; ++y)
      for (int64_t x = 4; x < 16; ++x) s.pixel->at(y, x) = 1;
  s.image_level = changed ? 1 : 0;
  s.source = id;
  return s;
}

Corpus synthetic(const std::string& name, int64_t pairs) {
  SynthSpec spec;
  spec.n_pairs = pairs;
  spec.n_test_pairs = 2;
  spec.size = 32;
  const fs::path root = temp_dir(name);
  generate_synthetic(spec, root);
  CorpusSpec cs;
  cs.root = root;
  return load_corpus(cs);
}

}  // namespace

TEST(Trainer, ZeroLearningRateLeavesParametersBitIdentical) {
  RunConfig cfg;
  cfg.lr = 0;
  const Sample a = make_sample("a", 1, false, true), b = make_sample("b", 2, false, false);
  const std::vector<const Sample*> batch{&a, &b};
  const std::vector<int> labels{1, 0};
  for (Mode mode : {Mode::kSupervised, Mode::kWeak}) {
    Model model(small_model(), cfg);
    const auto before = model.params().snapshot();
    AdamW opt(cfg);
    Rng rng(3);
    train_step(model, opt, mode, batch, labels, cfg, rng);
    EXPECT_EQ(model.params().snapshot(), before) << to_string(mode);
  }
}

TEST(Trainer, SupervisedInitialLossIsAnalytic) {
  RunConfig cfg;
  Model model(small_model(), cfg);
  AdamW opt(cfg);
  Rng rng(0);
  const Sample a = make_sample("a", 1, false, true), b = make_sample("b", 2, false, false);
  // Scores are 0.5 everywhere: each populated term contributes 0.5^2.
  const std::vector<const Sample*> both{&a, &b};
  EXPECT_NEAR(train_step(model, opt, Mode::kSupervised, both, std::vector<int>{1, 0}, cfg, rng), 0.5, 1e-12);
  Model fresh(small_model(), cfg);
  AdamW opt2(cfg);
  const std::vector<const Sample*> quiet{&b};
  EXPECT_NEAR(train_step(fresh, opt2, Mode::kSupervised, quiet, std::vector<int>{0}, cfg, rng), 0.25, 1e-12);
}

TEST(Trainer, WeakInitialLossOnIdenticalPhases) {
  RunConfig cfg;
  Model model(small_model(), cfg);
  AdamW opt(cfg);
  Rng rng(5);
  const Sample s = make_sample("same", 4, true, false);
  const std::vector<const Sample*> batch{&s};
  nlohmann::json comp;
  const double loss = train_step(model, opt, Mode::kWeak, batch, std::vector<int>{0}, cfg, rng, &comp);
  EXPECT_NEAR(comp.at("cls").get<double>(), std::log(2.0), 1e-12);
  EXPECT_EQ(comp.at("cfr").get<double>(), 1.0);
  const double sc = comp.at("scr").get<double>();
  EXPECT_GE(sc, 0.0);
  EXPECT_NEAR(loss, std::log(2.0) + sc + 1.0, 1e-12);
}

TEST(Trainer, NonFiniteLossAborts) {
  RunConfig cfg;
  Model model(small_model(), cfg);
  for (const auto& [name, v] : model.params().all())
    if (name.ends_with(".head.weight")) Var(v).mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
  AdamW opt(cfg);
  Rng rng(0);
  const Sample a = make_sample("a", 1, false, true);
  const std::vector<const Sample*> batch{&a};
  EXPECT_EQ(code_of([&] { train_step(model, opt, Mode::kSupervised, batch, std::vector<int>{1}, cfg, rng); }),
            ErrorCode::kNonFiniteLoss);
}

TEST(Trainer, ModeLabelMismatch) {
  Corpus c;
  Sample s = make_sample("x", 1, false, true);
  s.pixel.reset();
  s.image_level.reset();
  c.samples.push_back(s);
  RunConfig cfg;
  cfg.epochs = 1;
  TrainOptions opts;
  opts.model = small_model();
  EXPECT_EQ(code_of([&] { train(Mode::kSupervised, c, cfg, opts); }), ErrorCode::kModeLabelMismatch);
  EXPECT_EQ(code_of([&] { train(Mode::kWeak, c, cfg, opts); }), ErrorCode::kModeLabelMismatch);
}

TEST(Trainer, UntrainedModelPredictsNoChange) {
  const Corpus c = synthetic("trainer_untrained", 3);
  RunConfig cfg;
  Model model(small_model(), cfg);
  const EvalResult r = evaluate(model, Mode::kSupervised, c, cfg);
  EXPECT_EQ(r.total.tp + r.total.fp, 0);
  if (r.total.fn > 0) EXPECT_EQ(r.aggregate.f1, 0.0);
}

TEST(Trainer, DeterministicReplay) {
  const Corpus c = synthetic("trainer_det", 4);
  RunConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.lr = 3e-3;
  TrainOptions opts;
  opts.model = small_model();
  for (Mode mode : {Mode::kSupervised, Mode::kWeak}) {
    const TrainResult a = train(mode, c, cfg, opts), b = train(mode, c, cfg, opts);
    ASSERT_EQ(a.state.loss_history.size(), 4u);
    EXPECT_EQ(a.state.loss_history, b.state.loss_history);
    EXPECT_EQ(a.state.param_snapshot_id, b.state.param_snapshot_id);
    EXPECT_EQ(evaluate(*a.model, mode, c, cfg).to_json().dump(), evaluate(*b.model, mode, c, cfg).to_json().dump());
  }
}

TEST(Trainer, CheckpointRoundTrip) {
  const Corpus c = synthetic("trainer_ckpt", 3);
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 3e-3;
  TrainOptions opts;
  opts.model = small_model();
  const TrainResult r = train(Mode::kSupervised, c, cfg, opts);
  const fs::path dir = temp_dir("trainer_ckpt_out");
  save_checkpoint(dir / "model.ucda", *r.model, Mode::kSupervised, cfg, r.state);
  const Checkpoint ck = load_checkpoint(dir / "model.ucda");
  EXPECT_EQ(ck.mode, Mode::kSupervised);
  EXPECT_EQ(ck.state.loss_history, r.state.loss_history);
  EXPECT_EQ(snapshot_id(ck.model->params()), r.state.param_snapshot_id);
  EXPECT_EQ(ck.model->params().snapshot(), r.model->params().snapshot());
  EXPECT_EQ(evaluate(*ck.model, ck.mode, c, ck.cfg).to_json().dump(),
            evaluate(*r.model, Mode::kSupervised, c, cfg).to_json().dump());

  TensorArchive a = read_archive(dir / "model.ucda");
  a.meta["version"] = kCheckpointVersion + 1;
  write_archive(dir / "future.ucda", a);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "future.ucda"); }), ErrorCode::kCheckpointVersionMismatch);
  a.meta.erase("format");
  write_archive(dir / "plain.ucda", a);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "plain.ucda"); }), ErrorCode::kCheckpointVersionMismatch);
}

TEST(Trainer, EvaluateWritesErrorMaps) {
  const Corpus c = synthetic("trainer_maps", 2);
  RunConfig cfg;
  Model model(small_model(), cfg);
  const fs::path out = temp_dir("trainer_maps_out");
  EvalOptions eo;
  eo.error_map_dir = out;
  const EvalResult r = evaluate(model, Mode::kSupervised, c, cfg, eo);
  for (const auto& row : r.per_image) EXPECT_TRUE(fs::exists(out / (row.name + ".png")));
  Corpus unlabeled = c;
  for (auto& s : unlabeled.samples) s.pixel.reset();
  EXPECT_EQ(code_of([&] { evaluate(model, Mode::kSupervised, unlabeled, cfg); }), ErrorCode::kModeLabelMismatch);
}

TEST(Trainer, SupervisedLossDropsTenfold) {
  SynthSpec spec;
  spec.n_pairs = 20;
  spec.n_test_pairs = 0;
  spec.size = 64;
  const fs::path root = temp_dir("trainer_converge");
  generate_synthetic(spec, root);
  CorpusSpec cs;
  cs.root = root;
  const Corpus c = load_corpus(cs);
  RunConfig cfg;
  cfg.lr = 3e-3;
  cfg.epochs = 100;
  const TrainResult r = train(Mode::kSupervised, c, cfg);
  const auto& h = r.state.loss_history;
  const size_t per_epoch = 5;
  double first = 0, last = 0;
  for (size_t i = 0; i < per_epoch; ++i) {
    first += h[i];
    last += h[h.size() - 1 - i];
  }
  EXPECT_LT(last * 10.0, first) << "first epoch " << first / per_epoch << ", last epoch " << last / per_epoch;
}
