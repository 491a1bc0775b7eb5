#include "unicd/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"

#include "unicd/error.hpp"
#include "unicd/image_io.hpp"
#include "unicd/trainer.hpp"

namespace fs = std::filesystem;

namespace unicd {
namespace {

std::string kebab(std::string_view snake) {
  std::string s(snake);
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

// Everything a subcommand may configure. Sources apply in order: defaults,
// --config file, per-field flags, --set overrides.
struct Settings {
  RunConfig run;
  CorpusSpec corpus;
  SynthSpec synth;
  ModelOptions model;

  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> run_flags;    // snake-case name -> raw value
  std::map<std::string, std::string> synth_flags;
  std::map<std::string, std::string> corpus_flags;
};

void add_run_flags(CLI::App* app, Settings& s) {
  for (const auto& f : run_config_fields()) {
    const std::string name(f.name);
    app->add_option_function<std::string>(
           "--" + kebab(f.name), [&s, name](const std::string& v) { s.run_flags[name] = v; }, std::string(f.help))
        ->group("Run config");
  }
}

void add_common(CLI::App* app, Settings& s) {
  app->add_option("--config", s.config_path, "JSON file with optional sections run, corpus, synth, model");
  app->add_option("--set", s.sets, "key=value override of any run, corpus or synth field (repeatable)");
}

void add_corpus_flags(CLI::App* app, Settings& s, const std::string& default_split) {
  auto flag = [&](const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [&s, key](const std::string& v) { s.corpus_flags[key] = v; }, help);
  };
  flag("--data", "root", "corpus root (LEVIR-style A/, B/, label/)");
  flag("--split", "split", "train, val or test (default " + default_split + ")");
  flag("--patch-size", "patch_size", "tile edge in pixels, 0 keeps whole images (default 64)");
}

void add_model_flags(CLI::App* app, Settings& s) {
  app->add_option_function<std::string>(
      "--encoder",
      [&s](const std::string& v) {
        nlohmann::json j;
        to_json(j, s.model.encoder);
        j["backend"] = v;
        s.model.encoder = j.get<EncoderSpec>();
      },
      "encoder backend: toy_cnn or frozen_file");
  app->add_option("--decoder-width", s.model.decoder_width, "decoder channel width")->capture_default_str();
}

bool set_corpus_field(CorpusSpec& c, const std::string& key, const std::string& value) {
  if (key == "root") c.root = value;
  else if (key == "split") c.split = value;
  else if (key == "layout") c.layout = value;
  else if (key == "patch_size") {
    try {
      c.patch_size = std::stoll(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig, "bad value '" + value + "' for patch_size");
    }
  } else return false;
  return true;
}

bool is_run_field(const std::string& key) {
  const auto& fields = run_config_fields();
  return std::any_of(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.name == key; });
}

void resolve(Settings& s) {
  if (!s.config_path.empty()) {
    std::ifstream f(s.config_path);
    if (!f) throw Error(ErrorCode::kInvalidConfig, "cannot read config file " + s.config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kInvalidConfig, s.config_path + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, s.config_path + ": expected a JSON object");
    for (const auto& [section, body] : j.items()) {
      if (section == "run") {
        RunConfig merged = s.run;
        nlohmann::json base = merged;
        for (const auto& [k, v] : body.items()) {
          if (!base.contains(k)) throw Error(ErrorCode::kInvalidConfig, "unknown run field '" + k + "'");
          base[k] = v;
        }
        s.run = base.get<RunConfig>();
      } else if (section == "synth") {
        from_json(body, s.synth);
      } else if (section == "model") {
        s.model = body.get<ModelOptions>();
      } else if (section == "corpus") {
        for (const auto& [k, v] : body.items())
          if (!set_corpus_field(s.corpus, k, v.is_string() ? v.get<std::string>() : v.dump()))
            throw Error(ErrorCode::kInvalidConfig, "unknown corpus field '" + k + "'");
      } else {
        throw Error(ErrorCode::kInvalidConfig, "unknown config section '" + section + "'");
      }
    }
  }
  for (const auto& [k, v] : s.corpus_flags) set_corpus_field(s.corpus, k, v);
  for (const auto& [k, v] : s.run_flags) apply_override(s.run, k, v);
  for (const auto& [k, v] : s.synth_flags) apply_override(s.synth, k, v);
  for (const auto& kv : s.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kInvalidConfig, "--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq);
    std::replace(key.begin(), key.end(), '-', '_');
    const std::string value = kv.substr(eq + 1);
    if (is_run_field(key)) apply_override(s.run, key, value);
    else if (!set_corpus_field(s.corpus, key, value)) apply_override(s.synth, key, value);
  }
  s.run.validate();
  s.corpus.validate();
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  f << j.dump(2) << "\n";
}

Corpus require_corpus(const Settings& s) {
  if (s.corpus.root.empty()) throw Error(ErrorCode::kInvalidConfig, "--data is required");
  return load_corpus(s.corpus);
}

std::shared_ptr<const FeatureSource> features_of(const Corpus& c) {
  return std::make_shared<ArchiveFeatureSource>(c.dir / "features");
}

int cmd_synth(const Settings& s, const fs::path& out, std::ostream& os) {
  generate_synthetic(s.synth, out);
  os << fmt::format("wrote {} train and {} test pairs to {}\n", s.synth.n_pairs, s.synth.n_test_pairs, out.string());
  return kExitOk;
}

int cmd_train(const Settings& s, Mode mode, const fs::path& out, std::ostream& os) {
  const Corpus corpus = require_corpus(s);
  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl");
  TrainOptions opts;
  opts.model = s.model;
  opts.on_step = [&](const StepRecord& r) { log << to_json(r).dump() << "\n"; };
  TrainResult r = train(mode, corpus, s.run, opts);
  save_checkpoint(out / "checkpoint.ucda", *r.model, mode, s.run, r.state);
  write_json(out / "train_state.json", {{"mode", std::string(to_string(mode))},
                                        {"step", r.state.step},
                                        {"epoch", r.state.epoch},
                                        {"param_snapshot_id", r.state.param_snapshot_id},
                                        {"loss_history", r.state.loss_history}});
  if (!r.pseudo.empty()) {
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& p : r.pseudo) recs.push_back(packet_record(p));
    write_json(out / "pseudo_labels.json", {{"records", recs}});
  }
  os << fmt::format("trained {} steps; final loss {:.6f}; checkpoint {}\n", r.state.step,
                    r.state.loss_history.empty() ? 0.0 : r.state.loss_history.back(),
                    (out / "checkpoint.ucda").string());
  return kExitOk;
}

Checkpoint load_for(const fs::path& ckpt, const Corpus& corpus, Settings& s) {
  Checkpoint ck = load_checkpoint(ckpt, features_of(corpus));
  RunConfig cfg = ck.cfg;
  for (const auto& [k, v] : s.run_flags) apply_override(cfg, k, v);
  for (const auto& kv : s.sets) {
    const auto eq = kv.find('=');
    std::string key = kv.substr(0, eq);
    std::replace(key.begin(), key.end(), '-', '_');
    if (is_run_field(key)) apply_override(cfg, key, kv.substr(eq + 1));
  }
  cfg.validate();
  ck.cfg = cfg;
  return ck;
}

int cmd_eval(Settings& s, const fs::path& ckpt, const fs::path& out, std::ostream& os, std::ostream& err) {
  if (s.corpus.root.empty()) throw Error(ErrorCode::kInvalidConfig, "--data is required");
  const fs::path label_dir = resolve_corpus_dir(s.corpus) / "label";
  if (!fs::is_directory(label_dir)) {
    err << "error: evaluation needs pixel labels; missing directory " << label_dir.string() << "\n";
    return kExitInvalidConfig;
  }
  const Corpus corpus = require_corpus(s);
  Checkpoint ck = load_for(ckpt, corpus, s);
  EvalOptions eo;
  eo.error_map_dir = out / "error_maps";
  const EvalResult r = evaluate(*ck.model, ck.mode, corpus, ck.cfg, eo);
  write_json(out / "metrics.json", r.to_json());
  const std::string table = metrics_table(r.per_image);
  std::ofstream(out / "metrics.txt") << table;
  os << table;
  return kExitOk;
}

int cmd_pseudo(const Settings& s, const fs::path& out, std::ostream& os) {
  const Corpus corpus = require_corpus(s);
  const auto packets = pseudo_label_corpus(corpus, s.run);
  fs::create_directories(out / "v");
  nlohmann::json recs = nlohmann::json::array();
  std::vector<int> truth;
  for (size_t i = 0; i < packets.size(); ++i) {
    recs.push_back(packet_record(packets[i]));
    write_png(out / "v" / (packets[i].id + ".png"), plane_to_png(packets[i].v));
    const Sample& smp = corpus.samples[i];
    if (smp.image_level) truth.push_back(*smp.image_level);
    else if (smp.pixel) truth.push_back(smp.pixel->max() > 0 ? 1 : 0);
  }
  nlohmann::json doc = {{"records", recs}};
  if (truth.size() == packets.size()) {
    const double acc = pseudo_label_quality(packets, truth);
    doc["accuracy"] = acc;
    os << fmt::format("pseudo-label accuracy {:.4f} over {} pairs\n", acc, packets.size());
  } else {
    os << fmt::format("pseudo-labelled {} pairs (no truth available)\n", packets.size());
  }
  write_json(out / "pseudo_labels.json", doc);
  return kExitOk;
}

int cmd_predict(Settings& s, const fs::path& ckpt, const fs::path& out, std::ostream& os) {
  const Corpus corpus = require_corpus(s);
  Checkpoint ck = load_for(ckpt, corpus, s);
  const bool cams = ck.mode != Mode::kSupervised;
  for (const char* d : {"pred", "scores"}) fs::create_directories(out / d);
  if (cams) fs::create_directories(out / "cam");
  nlohmann::json logits = nlohmann::json::object();
  for (const auto& smp : corpus.samples) {
    const ChangeMap m = predict(*ck.model, ck.mode, smp.pair, ck.cfg);
    write_png(out / "pred" / (smp.pair.id + ".png"), plane_to_png(crop_to_original(m.binary(), smp.pair)));
    write_png(out / "scores" / (smp.pair.id + ".png"), plane_to_png(crop_to_original(m.scores, smp.pair)));
    if (!cams) continue;
    const ImagePair& p = smp.pair;
    const std::array<std::string, 1> ids{p.id};
    const auto f = ck.model->forward(p.t1.reshaped({1, p.channels(), p.height(), p.width()}),
                                     p.t2.reshaped({1, p.channels(), p.height(), p.width()}), ids);
    const CamOutput c = ck.model->classify(f).cams[0];
    const Tensor up = resize_bilinear(c.cam.reshaped({1, 1, c.cam.dim(0), c.cam.dim(1)}), p.height(), p.width())
                          .reshaped({p.height(), p.width()});
    write_png(out / "cam" / (p.id + ".png"), plane_to_png(crop_to_original(up, p)));
    logits[p.id] = c.logit;
  }
  if (cams) write_json(out / "cam" / "logits.json", logits);
  os << fmt::format("wrote {} change maps to {}\n", corpus.samples.size(), out.string());
  return kExitOk;
}

std::vector<int64_t> parse_seeds(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stoll(tok));
    } catch (const std::exception&) {
      throw Error(ErrorCode::kInvalidConfig, "bad seed '" + tok + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::kInvalidConfig, "no seeds given");
  return out;
}

int cmd_ablate(Settings& s, const std::string& grid, const std::string& seeds, const fs::path& out, std::ostream& os) {
  CorpusSpec train_spec = s.corpus, test_spec = s.corpus;
  train_spec.split = "train";
  test_spec.split = "test";
  if (s.corpus.root.empty()) throw Error(ErrorCode::kInvalidConfig, "--data is required");
  const Corpus train_c = load_corpus(train_spec), test_c = load_corpus(test_spec);

  struct Variant {
    std::string name;
    Mode mode;
    bool stam, scr, cfr;
  };
  std::vector<Variant> variants;
  if (grid == "stam") {
    variants = {{"concat", Mode::kSupervised, false, true, true}, {"stam", Mode::kSupervised, true, true, true}};
  } else if (grid == "crr") {
    variants = {{"none", Mode::kWeak, true, false, false},
                {"scr", Mode::kWeak, true, true, false},
                {"cfr", Mode::kWeak, true, false, true},
                {"scr+cfr", Mode::kWeak, true, true, true}};
  } else {
    throw Error(ErrorCode::kInvalidConfig, "--grid must be stam or crr");
  }
  nlohmann::json rows = nlohmann::json::array();
  for (const int64_t seed : parse_seeds(seeds))
    for (const auto& v : variants) {
      RunConfig cfg = s.run;
      cfg.seed = seed;
      cfg.use_stam = v.stam;
      cfg.use_scr = v.scr;
      cfg.use_cfr = v.cfr;
      TrainOptions opts;
      opts.model = s.model;
      TrainResult r = train(v.mode, train_c, cfg, opts);
      const MetricsReport m = evaluate(*r.model, v.mode, test_c, cfg).aggregate;
      rows.push_back({{"variant", v.name}, {"seed", seed}, {"metrics", to_json(m)}});
      os << fmt::format("{:<8} seed {:<3} f1 {:.4f} iou {:.4f}\n", v.name, seed, m.f1, m.iou);
    }
  write_json(out / "ablation.json", {{"grid", grid}, {"rows", rows}});
  return kExitOk;
}

std::string run_fields_footer() {
  std::string s = "Run config fields (flags are kebab-case, --set accepts either spelling):\n";
  for (const auto& f : run_config_fields()) s += fmt::format("  {:<16} {}\n", f.name, f.help);
  return s;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified bi-temporal change detection: training, evaluation and pseudo-labelling"};
  app.footer(run_fields_footer());
  app.require_subcommand(1);

  Settings s;
  std::string mode_name = "supervised", grid = "stam", seeds = "0,1,2";
  fs::path out_dir = "out", ckpt;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus");
  add_common(synth, s);
  synth->add_option("--out", out_dir, "output root")->capture_default_str();
  {
    nlohmann::json defaults = s.synth;
    for (const auto& [k, v] : defaults.items()) {
      const std::string key = k;
      synth->add_option_function<std::string>(
               "--" + kebab(key), [&s, key](const std::string& val) { s.synth_flags[key] = val; },
               "default " + v.dump())
          ->group("Synthetic data");
    }
  }

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, s);
  add_corpus_flags(tr, s, "train");
  add_model_flags(tr, s);
  add_run_flags(tr, s);
  tr->add_option("--mode", mode_name, "supervised, weak or unsupervised")->capture_default_str();
  tr->add_option("--out", out_dir, "output directory")->capture_default_str();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against pixel labels");
  add_common(ev, s);
  add_corpus_flags(ev, s, "test");
  add_run_flags(ev, s);
  ev->add_option("--checkpoint", ckpt, "checkpoint archive")->required();
  ev->add_option("--out", out_dir, "output directory")->capture_default_str();

  auto* ps = app.add_subcommand("pseudo-label", "run semantic-prior pseudo-labelling over a corpus");
  add_common(ps, s);
  add_corpus_flags(ps, s, "train");
  add_run_flags(ps, s);
  ps->add_option("--out", out_dir, "output directory")->capture_default_str();

  auto* pr = app.add_subcommand("predict", "write change maps for a corpus");
  add_common(pr, s);
  add_corpus_flags(pr, s, "test");
  add_run_flags(pr, s);
  pr->add_option("--checkpoint", ckpt, "checkpoint archive")->required();
  pr->add_option("--out", out_dir, "output directory")->capture_default_str();

  auto* ab = app.add_subcommand("ablate", "train and evaluate an ablation grid over seeds");
  add_common(ab, s);
  add_corpus_flags(ab, s, "train");
  add_model_flags(ab, s);
  add_run_flags(ab, s);
  ab->add_option("--grid", grid, "stam (fusion on/off) or crr (regularizer combinations)")->capture_default_str();
  ab->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  ab->add_option("--out", out_dir, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInvalidConfig;
  }

  try {
    s.corpus.split = ev->parsed() || pr->parsed() ? "test" : "train";
    resolve(s);
    if (synth->parsed()) return cmd_synth(s, out_dir, out);
    if (tr->parsed()) return cmd_train(s, parse_mode(mode_name), out_dir, out);
    if (ev->parsed()) return cmd_eval(s, ckpt, out_dir, out, err);
    if (ps->parsed()) return cmd_pseudo(s, out_dir, out);
    if (pr->parsed()) return cmd_predict(s, ckpt, out_dir, out);
    if (ab->parsed()) return cmd_ablate(s, grid, seeds, out_dir, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidConfig ? kExitInvalidConfig : kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInvalidConfig;
}

}  // namespace unicd
