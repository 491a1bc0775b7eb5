#include <gtest/gtest.h>

#include <cmath>

#include "unicd/spci.hpp"
#include "test_util.hpp"

using namespace unicd;
using unicd::testing::code_of;
using unicd::testing::temp_dir;
using unicd::testing::uniform;
using unicd::testing::values_of;

namespace {

// Every level is a constant field holding vector v.
FeaturePyramid constant_pyramid(const std::vector<double>& v, int64_t size = 32) {
  FeaturePyramid p;
  const auto c = static_cast<int64_t>(v.size());
  for (int i = 0; i < kPyramidLevels; ++i) {
    const int64_t s = size / level_stride(i);
    Tensor t({c, s, s});
    for (int64_t k = 0; k < c; ++k)
      for (int64_t j = 0; j < s * s; ++j) t[k * s * s + j] = v[static_cast<size_t>(k)];
    p.levels[static_cast<size_t>(i)] = t;
  }
  return p;
}

FeaturePyramid random_pyramid(uint64_t seed, int64_t size = 64) {
  std::mt19937_64 rng(seed);
  FeaturePyramid p;
  for (int i = 0; i < kPyramidLevels; ++i) {
    const int64_t s = size / level_stride(i);
    p.levels[static_cast<size_t>(i)] = uniform({3, s, s}, rng);
  }
  return p;
}

InstanceMask mask_of(const std::string& id, Tensor m) { return InstanceMask{id, std::move(m), Temporal::kT1}; }

}  // namespace

TEST(ForegroundProb, Examples) {
  const std::vector<double> one{1.0}, zero{0.0};
  EXPECT_NEAR(foreground_prob(one, zero), std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-6);
  EXPECT_NEAR(foreground_prob(one, zero), 0.7311, 1e-4);
  const std::vector<double> fg3{0.4, 0.4, 0.4}, bg1{0.4};
  EXPECT_NEAR(foreground_prob(fg3, bg1), 0.75, 1e-15);
  const std::vector<double> two{0.3, -0.2};
  EXPECT_NEAR(foreground_prob(two, two), 0.5, 1e-15);
}

TEST(ForegroundProb, BackendPathMatchesCosines) {
  Vocabulary vocab;
  OracleParams op;
  SyntheticOracleBackend be(op, vocab, {{"img#1", true}, {"img#2", false}});
  const Tensor mask({4, 4}, 1.0), image({3, 4, 4}, 0.5);
  // Every foreground term has cosine fg_cos, every background term bg_cos.
  const double fg = 4 * std::exp(op.fg_cos), bg = 4 * std::exp(op.bg_cos);
  EXPECT_NEAR(foreground_prob(mask, image, vocab, be, "img#1"), fg / (fg + bg), 1e-12);
  const double fg2 = 4 * std::exp(op.bg_cos), bg2 = 4 * std::exp(op.fg_cos);
  EXPECT_NEAR(foreground_prob(mask, image, vocab, be, "img#2"), fg2 / (fg2 + bg2), 1e-12);
  EXPECT_EQ(code_of([&] { foreground_prob(mask, image, vocab, be, "img#9"); }), ErrorCode::kEmbeddingMissing);
  EXPECT_EQ(code_of([&] { foreground_prob(Tensor({4, 4}), image, vocab, be, "img#1"); }), ErrorCode::kEmptyInput);
}

TEST(OracleBackend, UnitNormAndTargetCosines) {
  Vocabulary vocab;
  OracleParams op;
  op.jitter = 0.05;
  SyntheticOracleBackend be(op, vocab, {{"a#1", true}});
  const Embedding x = be.embed_image(Tensor(), "a#1");
  double n = 0;
  for (double v : x) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
  for (const auto& t : vocab.foreground) EXPECT_NEAR(cosine(x, be.embed_text(t)), op.fg_cos, op.jitter + 1e-12);
  for (const auto& t : vocab.background) EXPECT_NEAR(cosine(x, be.embed_text(t)), op.bg_cos, op.jitter + 1e-12);
  EXPECT_EQ(be.embed_image(Tensor(), "a#1"), x);

  OracleParams impossible;
  impossible.fg_cos = 0.9;
  impossible.bg_cos = 0.9;
  EXPECT_EQ(code_of([&] { SyntheticOracleBackend(impossible, vocab, {}); }), ErrorCode::kInvalidConfig);
}

TEST(Vocabulary, Validation) {
  Vocabulary v;
  EXPECT_NO_THROW(v.validate());
  v.background.push_back("building");
  EXPECT_EQ(code_of([&] { v.validate(); }), ErrorCode::kInvalidConfig);
  Vocabulary empty;
  empty.foreground.clear();
  EXPECT_EQ(code_of([&] { empty.validate(); }), ErrorCode::kInvalidConfig);
}

TEST(EmbeddingFile, RoundTripsOracle) {
  const auto dir = temp_dir("emb");
  Vocabulary vocab;
  SyntheticOracleBackend be(OracleParams{}, vocab, {{"m#1", true}, {"m#2", false}});
  write_embedding_archive(dir / "e.ucda", be, vocab, {"m#1", "m#2"});
  EmbeddingFileBackend file(dir / "e.ucda");
  for (const auto& id : {"m#1", "m#2"}) {
    const Embedding a = be.embed_image(Tensor(), id), b = file.embed_image(Tensor(), id);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
  EXPECT_EQ(code_of([&] { file.embed_text("lake"); }), ErrorCode::kEmbeddingMissing);
  EXPECT_EQ(code_of([&] { EmbeddingFileBackend(dir / "none.ucda"); }), ErrorCode::kEmbeddingMissing);
}

TEST(Saliency, MaxRule) {
  InstanceMaskSet none;
  EXPECT_EQ(saliency_map(none, {}, 4, 4), Tensor({4, 4}));

  InstanceMaskSet full;
  full.masks.push_back(mask_of("x#1", Tensor({4, 4}, 1.0)));
  const std::vector<double> p{std::exp(1.0) / (std::exp(1.0) + 1)};
  for (double v : values_of(saliency_map(full, p, 4, 4))) EXPECT_DOUBLE_EQ(v, p[0]);

  Tensor a({1, 4}, std::vector<double>{1, 1, 1, 0});
  Tensor b({1, 4}, std::vector<double>{0, 1, 1, 1});
  InstanceMaskSet two;
  two.masks.push_back(mask_of("x#1", a));
  two.masks.push_back(mask_of("x#2", b));
  const std::vector<double> probs{0.6, 0.9};
  EXPECT_EQ(saliency_map(two, probs, 1, 4), Tensor({1, 4}, std::vector<double>{0.6, 0.9, 0.9, 0.9}));
  const std::vector<double> short_probs{0.6};
  EXPECT_EQ(code_of([&] { saliency_map(two, short_probs, 1, 4); }), ErrorCode::kLengthMismatch);
}

TEST(DistanceMap, Examples) {
  const FeaturePyramid a = constant_pyramid({1, 0});
  const FeaturePyramid b = constant_pyramid({0, 1});
  const FeaturePyramid c = constant_pyramid({1 / std::sqrt(2.0), 1 / std::sqrt(2.0)});
  for (double v : values_of(distance_map(a, a, 32, 32))) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : values_of(distance_map(a, b, 32, 32))) EXPECT_NEAR(v, 1.0, 1e-15);
  for (double v : values_of(distance_map(a, c, 32, 32))) EXPECT_NEAR(v, 1.0 - 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(distance_map(a, c, 32, 32)[0], 0.2929, 1e-4);
  const FeaturePyramid z = constant_pyramid({0, 0});
  for (double v : values_of(distance_map(a, z, 32, 32))) EXPECT_EQ(v, 0.0);
}

TEST(DistanceMap, SymmetricZeroOnIdenticalAndBounded) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const FeaturePyramid a = random_pyramid(seed), b = random_pyramid(seed + 100);
    const Tensor ab = distance_map(a, b, 64, 64), ba = distance_map(b, a, 64, 64);
    EXPECT_EQ(ab.shape(), (Shape{64, 64}));
    for (int64_t i = 0; i < ab.numel(); ++i) {
      EXPECT_NEAR(ab[i], ba[i], 1e-14);
      EXPECT_GE(ab[i], -1e-12);
      EXPECT_LE(ab[i], 2.0 + 1e-12);
    }
    for (double v : values_of(distance_map(a, a, 64, 64))) EXPECT_NEAR(v, 0.0, 1e-12);
  }
  FeaturePyramid bad = random_pyramid(1, 32);
  EXPECT_EQ(code_of([&] { distance_map(random_pyramid(0), bad, 64, 64); }), ErrorCode::kShapeMismatch);
}

TEST(ComposePseudo, ProductMatchesScalarLoop) {
  std::mt19937_64 rng(3);
  const Tensor f = uniform({16, 16}, rng, 0, 1), d = uniform({16, 16}, rng, 0, 2);
  RunConfig cfg;
  const PseudoLabelPacket p = compose_pseudo(f, d, cfg);
  double lo = 1e300, hi = -1e300;
  int64_t above = 0;
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) {
      const double v = f.at(y, x) * d.at(y, x);
      EXPECT_EQ(p.v_raw.at(y, x), v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      above += v > cfg.v_binarize;
    }
  for (int64_t i = 0; i < 256; ++i) EXPECT_NEAR(p.v[i], (p.v_raw[i] - lo) / (hi - lo), 1e-15);
  EXPECT_DOUBLE_EQ(p.changed_fraction, static_cast<double>(above) / 256.0);
  EXPECT_EQ(p.image_label, 1);
}

TEST(ComposePseudo, Examples) {
  RunConfig cfg;
  const PseudoLabelPacket same = compose_pseudo(Tensor({8, 8}, 0.9), Tensor({8, 8}), cfg);
  EXPECT_EQ(same.v_raw, Tensor({8, 8}));
  EXPECT_EQ(same.image_label, 0);

  std::mt19937_64 rng(4);
  const PseudoLabelPacket bg = compose_pseudo(Tensor({8, 8}), uniform({8, 8}, rng, 0, 2), cfg);
  EXPECT_EQ(bg.image_label, 0);

  Tensor d({8, 8});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) d.at(y, x) = 1.0;
  const PseudoLabelPacket q = compose_pseudo(Tensor({8, 8}, 0.7311), d, cfg);
  EXPECT_DOUBLE_EQ(q.changed_fraction, 0.25);
  EXPECT_EQ(q.image_label, 1);
  EXPECT_EQ(code_of([&] { compose_pseudo(Tensor({8, 8}), Tensor({8, 4}), cfg); }), ErrorCode::kShapeMismatch);
}

TEST(PseudoQuality, AccuracyAndReferenceRatio) {
  const std::vector<int> a{1, 0, 1, 1}, b{1, 0, 0, 1};
  EXPECT_DOUBLE_EQ(pseudo_label_quality(a, a), 1.0);
  EXPECT_DOUBLE_EQ(pseudo_label_quality(a, b), 0.75);
  const std::vector<int> short_truth{1};
  EXPECT_EQ(code_of([&] { pseudo_label_quality(a, short_truth); }), ErrorCode::kLengthMismatch);

  // 5757 of 7120 correct, reported as 80.85 %.
  std::vector<int> labels(7120, 1), truth(7120, 1);
  for (size_t i = 5757; i < truth.size(); ++i) truth[i] = 0;
  const double acc = pseudo_label_quality(labels, truth);
  EXPECT_DOUBLE_EQ(acc, 5757.0 / 7120.0);
  EXPECT_EQ(std::floor(acc * 10000.0) / 100.0, 80.85);
}

TEST(InstanceMasks, PngRoundTripAndUnion) {
  const auto dir = temp_dir("masks");
  Tensor idx({4, 4});
  idx.at(0, 0) = 1;
  idx.at(0, 1) = 1;
  idx.at(3, 3) = 4;
  write_instance_masks(dir / "m.png", idx);
  const InstanceMaskSet s = read_instance_masks(dir / "m.png", "img", Temporal::kT2);
  ASSERT_EQ(s.masks.size(), 2u);
  EXPECT_EQ(s.masks[0].id, "img#1");
  EXPECT_EQ(s.masks[1].id, "img#4");
  EXPECT_DOUBLE_EQ(s.masks[0].mask.sum(), 2.0);
  EXPECT_EQ(s.masks[1].phase, Temporal::kT2);
  EXPECT_EQ(union_masks(s, s).masks.size(), 4u);
  Tensor bad({2, 2}, 300.0);
  EXPECT_EQ(code_of([&] { write_instance_masks(dir / "b.png", bad); }), ErrorCode::kRangeError);
}

TEST(RunSpci, ForegroundChangeIsLabelledAndBackgroundIsNot) {
  Vocabulary vocab;
  SyntheticOracleBackend be(OracleParams{}, vocab, {{"p#1", true}, {"q#1", false}});
  RunConfig cfg;
  const ImagePair pair{Tensor({3, 32, 32}, 0.5), Tensor({3, 32, 32}, 0.5), "p"};
  Tensor m({32, 32});
  for (int64_t y = 8; y < 24; ++y)
    for (int64_t x = 8; x < 24; ++x) m.at(y, x) = 1;
  // Orthogonal features everywhere: D = 1.
  const FeaturePyramid a = constant_pyramid({1, 0}), b = constant_pyramid({0, 1});
  InstanceMaskSet fg;
  fg.masks.push_back(mask_of("p#1", m));
  const PseudoLabelPacket pf = run_spci(pair, fg, a, b, vocab, be, cfg);
  EXPECT_EQ(pf.image_label, 1);
  EXPECT_EQ(pf.id, "p");
  EXPECT_DOUBLE_EQ(pf.changed_fraction, 0.25);

  InstanceMaskSet bg;
  bg.masks.push_back(mask_of("q#1", m));
  EXPECT_EQ(run_spci(pair, bg, a, b, vocab, be, cfg).image_label, 0);
}
