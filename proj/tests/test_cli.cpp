#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "json.hpp"

#include "unicd/cli.hpp"
#include "unicd/types.hpp"
#include "test_util.hpp"

using namespace unicd;
using unicd::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "unicd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream f(e.path(), std::ios::binary);
      files[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(f), {}};
    }
  return files;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

const fs::path& corpus_root() {
  static const fs::path root = [] {
    const fs::path r = temp_dir("cli_corpus");
    const CliRun run = cli({"synth-data", "--out", r.string(), "--n-pairs", "3", "--n-test-pairs", "2", "--size", "32"});
    EXPECT_EQ(run.code, 0) << run.err;
    return r;
  }();
  return root;
}

}  // namespace

TEST(Cli, HelpListsEveryRunConfigField) {
  const CliRun r = cli({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const auto& f : run_config_fields()) {
    std::string flag = "--" + std::string(f.name);
    std::replace(flag.begin(), flag.end(), '_', '-');
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
}

TEST(Cli, TrainEvalPredictSmoke) {
  const fs::path data = corpus_root();
  const auto before = snapshot_tree(data);
  const fs::path out = temp_dir("cli_train");
  const CliRun tr = cli({"train", "--data", data.string(), "--mode", "supervised", "--epochs", "1", "--lr", "3e-3",
                      "--out", out.string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(out / "checkpoint.ucda"));
  EXPECT_TRUE(fs::exists(out / "train_log.jsonl"));
  EXPECT_EQ(read_json(out / "train_state.json").at("loss_history").size(), 1u);

  const fs::path ev = temp_dir("cli_eval");
  const CliRun e = cli({"eval", "--data", data.string(), "--checkpoint", (out / "checkpoint.ucda").string(), "--out",
                     ev.string()});
  ASSERT_EQ(e.code, 0) << e.err;
  const nlohmann::json m = read_json(ev / "metrics.json");
  EXPECT_EQ(m.at("images").size(), 2u);
  EXPECT_TRUE(fs::exists(ev / "error_maps" / "test_000.png"));

  const fs::path pr = temp_dir("cli_predict");
  const CliRun p = cli({"predict", "--data", data.string(), "--checkpoint", (out / "checkpoint.ucda").string(), "--out",
                     pr.string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(pr / "pred" / "test_001.png"));
  EXPECT_EQ(snapshot_tree(data), before);
}

TEST(Cli, PseudoLabelReportsAccuracy) {
  const fs::path out = temp_dir("cli_pseudo");
  const CliRun r = cli({"pseudo-label", "--data", corpus_root().string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy"), std::string::npos);
  const nlohmann::json j = read_json(out / "pseudo_labels.json");
  EXPECT_TRUE(j.contains("accuracy"));
  EXPECT_EQ(j.at("records").size(), 3u);
}

TEST(Cli, EvalWithoutLabelsNamesMissingDirectory) {
  const fs::path data = temp_dir("cli_nolabels");
  fs::copy(corpus_root() / "test", data / "test", fs::copy_options::recursive);
  fs::remove_all(data / "test" / "label");
  const CliRun r = cli({"eval", "--data", data.string(), "--checkpoint", "nowhere.ucda"});
  EXPECT_EQ(r.code, kExitInvalidConfig);
  EXPECT_NE(r.err.find((data / "test" / "label").string()), std::string::npos) << r.err;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, kExitInvalidConfig);
  EXPECT_EQ(cli({"train", "--bogus"}).code, kExitInvalidConfig);
  EXPECT_EQ(cli({"train", "--data", corpus_root().string(), "--lr", "-1"}).code, kExitInvalidConfig);
  EXPECT_EQ(cli({"train", "--data", corpus_root().string(), "--set", "no_such=1"}).code, kExitInvalidConfig);
  const fs::path empty = temp_dir("cli_empty");
  EXPECT_EQ(cli({"train", "--data", empty.string(), "--epochs", "1", "--out", (empty / "o").string()}).code,
            kExitRuntime);
  const fs::path bad = temp_dir("cli_badcfg") / "cfg.json";
  std::ofstream(bad) << "{\"run\": {\"lr\": \"fast\"}}";
  EXPECT_EQ(cli({"train", "--data", corpus_root().string(), "--config", bad.string()}).code, kExitInvalidConfig);
}

TEST(Cli, FlagsOverrideConfigFile) {
  const fs::path dir = temp_dir("cli_precedence");
  std::ofstream(dir / "cfg.json") << "{\"corpus\": {\"split\": \"test\"}}";
  const CliRun from_file = cli({"pseudo-label", "--data", corpus_root().string(), "--config",
                                (dir / "cfg.json").string(), "--out", (dir / "a").string()});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  EXPECT_EQ(read_json(dir / "a" / "pseudo_labels.json").at("records").size(), 2u);
  const CliRun flagged = cli({"pseudo-label", "--data", corpus_root().string(), "--config",
                              (dir / "cfg.json").string(), "--split", "train", "--out", (dir / "b").string()});
  ASSERT_EQ(flagged.code, 0) << flagged.err;
  EXPECT_EQ(read_json(dir / "b" / "pseudo_labels.json").at("records").size(), 3u);
}

TEST(Cli, WeakPredictDumpsCams) {
  const fs::path out = temp_dir("cli_weak");
  const CliRun tr = cli({"train", "--data", corpus_root().string(), "--mode", "weak", "--epochs", "1", "--out",
                         (out / "run").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  const CliRun p = cli({"predict", "--data", corpus_root().string(), "--checkpoint",
                        (out / "run" / "checkpoint.ucda").string(), "--out", (out / "pred").string()});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(fs::exists(out / "pred" / "cam" / "test_000.png"));
  EXPECT_EQ(read_json(out / "pred" / "cam" / "logits.json").size(), 2u);
}
