#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "unicd/data.hpp"
#include "unicd/image_io.hpp"
#include "test_util.hpp"

using namespace unicd;
using unicd::testing::code_of;
using unicd::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

RawImage solid(int64_t h, int64_t w, int channels, uint8_t v) {
  RawImage img;
  img.width = w;
  img.height = h;
  img.channels = channels;
  img.pixels.assign(static_cast<size_t>(h * w * channels), v);
  return img;
}

void write_pair(const fs::path& dir, const std::string& stem, int64_t size, bool with_label = true) {
  for (const char* sub : {"A", "B", "label"}) fs::create_directories(dir / sub);
  write_png(dir / "A" / (stem + ".png"), solid(size, size, 3, 40));
  write_png(dir / "B" / (stem + ".png"), solid(size, size, 3, 90));
  if (with_label) {
    RawImage lab = solid(size, size, 1, 0);
    lab.pixels[0] = 255;
    write_png(dir / "label" / (stem + ".png"), lab);
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

SynthSpec small_spec() {
  SynthSpec s;
  s.n_pairs = 3;
  s.n_test_pairs = 1;
  s.size = 64;
  return s;
}

}  // namespace

TEST(Corpus, FilenameOrderAndBinaryLabels) {
  const fs::path dir = temp_dir("corpus_order");
  write_pair(dir, "b", 32);
  write_pair(dir, "a", 32);
  CorpusSpec spec;
  spec.root = dir;
  const Corpus c = load_corpus(spec);
  ASSERT_EQ(c.samples.size(), 2u);
  EXPECT_EQ(c.samples[0].pair.id, "a");
  EXPECT_EQ(c.samples[1].pair.id, "b");
  ASSERT_TRUE(c.samples[0].pixel);
  EXPECT_EQ(c.samples[0].pixel->at(0, 0), 1.0);
  EXPECT_EQ(c.samples[0].pixel->sum(), 1.0);
  EXPECT_TRUE(c.has_pixel_labels());
}

TEST(Corpus, TilesWithoutOverlap) {
  const fs::path dir = temp_dir("corpus_tiles");
  write_pair(dir, "big", 128);
  CorpusSpec spec;
  spec.root = dir;
  spec.patch_size = 32;
  const Corpus c = load_corpus(spec);
  ASSERT_EQ(c.samples.size(), 16u);
  EXPECT_EQ(c.samples[0].pair.id, "big_r0_c0");
  EXPECT_EQ(c.samples[0].pair.height(), 32);
  EXPECT_EQ(c.samples[0].image_level, 1);
  EXPECT_EQ(c.samples[1].image_level, 0);
  for (const auto& s : c.samples) EXPECT_EQ(s.source, "big");
}

TEST(Corpus, LayoutErrors) {
  const fs::path empty = temp_dir("corpus_empty");
  CorpusSpec spec;
  spec.root = empty;
  EXPECT_EQ(code_of([&] { load_corpus(spec); }), ErrorCode::kLayoutError);

  const fs::path dir = temp_dir("corpus_missing");
  write_pair(dir, "x", 32);
  fs::remove(dir / "B" / "x.png");
  spec.root = dir;
  EXPECT_EQ(code_of([&] { load_corpus(spec); }), ErrorCode::kMissingPair);

  spec.patch_size = 48;
  EXPECT_EQ(code_of([&] { spec.validate(); }), ErrorCode::kInvalidConfig);
}

TEST(Corpus, LabelSetPerMode) {
  const fs::path dir = temp_dir("corpus_modes");
  write_pair(dir, "p", 32, false);
  fs::remove_all(dir / "label");
  CorpusSpec spec;
  spec.root = dir;
  const Corpus c = load_corpus(spec);
  EXPECT_FALSE(c.has_pixel_labels());
  const Sample& s = c.samples.at(0);
  EXPECT_EQ(code_of([&] { label_set(s, Mode::kSupervised); }), ErrorCode::kModeLabelMismatch);
  EXPECT_EQ(code_of([&] { label_set(s, Mode::kWeak); }), ErrorCode::kModeLabelMismatch);
  EXPECT_EQ(label_set(s, Mode::kUnsupervised).mode, Mode::kUnsupervised);
}

TEST(SynthSpec, JsonRoundTripAndOverrides) {
  SynthSpec s = small_spec();
  s.oracle.fg_cos = 0.7;
  nlohmann::json j;
  to_json(j, s);
  SynthSpec back;
  from_json(j, back);
  nlohmann::json j2;
  to_json(j2, back);
  EXPECT_EQ(j, j2);

  apply_override(back, "n-pairs", "7");
  EXPECT_EQ(back.n_pairs, 7);
  EXPECT_EQ(code_of([&] { apply_override(back, "bogus", "1"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([&] { apply_override(back, "size", "abc"); }), ErrorCode::kInvalidConfig);
  back.size = 48;
  EXPECT_EQ(code_of([&] { back.validate(); }), ErrorCode::kInvalidConfig);
}

TEST(Synthetic, ByteIdenticalForEqualSpecs) {
  const fs::path a = temp_dir("synth_a"), b = temp_dir("synth_b");
  generate_synthetic(small_spec(), a);
  generate_synthetic(small_spec(), b);
  size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 10u);
  SynthSpec other = small_spec();
  other.seed = 1;
  const fs::path c = temp_dir("synth_c");
  generate_synthetic(other, c);
  EXPECT_NE(slurp(a / "train" / "A" / "train_000.png"), slurp(c / "train" / "A" / "train_000.png"));
}

TEST(Synthetic, LoaderRoundTrip) {
  const fs::path root = temp_dir("synth_load");
  generate_synthetic(small_spec(), root);
  CorpusSpec spec;
  spec.root = root;
  const Corpus train = load_corpus(spec);
  ASSERT_EQ(train.samples.size(), 3u);
  EXPECT_TRUE(train.has_image_labels());
  for (const auto& s : train.samples) {
    ASSERT_TRUE(s.pixel);
    for (double v : unicd::testing::values_of(*s.pixel)) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_EQ(*s.image_level, s.pixel->max() > 0 ? 1 : 0);
    EXPECT_EQ(s.pair.t1.dim(0), 3);
    EXPECT_NO_THROW(load_instance_masks(train.dir, s.pair.id));
  }
  spec.split = "test";
  EXPECT_EQ(load_corpus(spec).samples.size(), 1u);
}

TEST(Synthetic, NoObjectChangeMeansEmptyLabel) {
  SynthSpec s = small_spec();
  s.change_min = s.change_max = 0;
  s.illum_min = s.illum_max = 0.2;
  const fs::path root = temp_dir("synth_nochange");
  generate_synthetic(s, root);
  CorpusSpec spec;
  spec.root = root;
  for (const auto& smp : load_corpus(spec).samples) {
    EXPECT_EQ(smp.pixel->sum(), 0.0);
    EXPECT_EQ(*smp.image_level, 0);
    double diff = 0;
    for (int64_t i = 0; i < smp.pair.t1.numel(); ++i) diff += std::abs(smp.pair.t2[i] - smp.pair.t1[i]);
    EXPECT_GT(diff / static_cast<double>(smp.pair.t1.numel()), 0.01);
  }
}
