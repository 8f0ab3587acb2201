// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// locoalign command-line tool. Talks to the library only through the C API.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "locoalign/locoalign.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Thrown to end a command with a specific exit code.
struct Abort {
  int code;
  std::string message;
};

int exit_code(la_status s) {
  switch (s) {
    case LA_OK: return kOk;
    case LA_ERR_USAGE: return kUsage;
    case LA_ERR_NUMERIC: return kNumeric;
    case LA_ERR_DATA:
    case LA_ERR_INTERNAL: return kData;
  }
  return kData;
}

void check(la_status s, const std::string& what) {
  if (s != LA_OK) throw Abort{exit_code(s), what + ": " + la_last_error()};
}

json take(char* s) {
  json j = s ? json::parse(s) : json::object();
  la_string_free(s);
  return j;
}

using DatasetPtr = std::unique_ptr<la_dataset, decltype(&la_dataset_close)>;
using ModelPtr = std::unique_ptr<la_model, decltype(&la_model_free)>;

DatasetPtr open_dataset(const fs::path& dir) {
  la_dataset* h = nullptr;
  check(la_dataset_open(dir.c_str(), &h), "cannot open dataset " + dir.string());
  return {h, la_dataset_close};
}

ModelPtr open_model(const fs::path& dir) {
  la_model* h = nullptr;
  check(la_model_load(dir.c_str(), &h), "cannot load checkpoint " + dir.string());
  return {h, la_model_free};
}

// ---------------------------------------------------------------------------
// Options shared by all subcommands

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::vector<std::string> sets;
  bool mask_action = false;
  std::string direction;
  std::string ks;
  std::string baseline = "pretrained";
  std::optional<std::size_t> epochs, batch, trajectories, gallery;
  bool raw = false;
  std::string input, input2;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::is_regular_file(path)) throw Abort{kUsage, "config file not found: " + path};
  std::ifstream in(path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw Abort{kUsage, "config file must hold a JSON object: " + path};
    // A previous run's run_config.json reproduces that run.
    if (j.contains("request")) return j["request"];
    return j;
  } catch (const json::exception& e) {
    throw Abort{kUsage, "cannot parse config " + path + ": " + e.what()};
  }
}

/// KEY=VALUE with a dotted key; VALUE is parsed as JSON, falling back to a string.
void apply_set(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw Abort{kUsage, "--set expects KEY=VALUE, got '" + kv + "'"};
  std::string key = kv.substr(0, eq);
  const std::string text = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  for (auto& c : key)
    if (c == '.') c = '/';
  cfg[json::json_pointer("/" + key)] = value;
}

std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      ks.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Abort{kUsage, "--ks expects a comma-separated list of positive integers, got '" + text + "'"};
    }
  }
  if (ks.empty()) throw Abort{kUsage, "--ks is empty"};
  return ks;
}

/// Config file, then --set overrides, then dedicated flags. The top-level
/// seed is propagated to every seeded section.
json build_config(const std::string& command, const Options& o) {
  json cfg = read_config(o.config_path);
  for (const auto& kv : o.sets) apply_set(cfg, kv);
  if (o.seed) cfg["seed"] = *o.seed;
  if (!cfg.contains("seed")) cfg["seed"] = 0;
  for (const char* section : {"synth", "train", "predictor", "prepare"}) cfg[section]["seed"] = cfg["seed"];
  if (o.trajectories) cfg["synth"]["trajectories"] = *o.trajectories;
  if (o.mask_action) {
    cfg["train"]["mask_action"] = true;
    cfg["retrieval"]["mask_action"] = true;
  }
  if (command == "pretrain") {
    if (o.epochs) cfg["train"]["epochs"] = *o.epochs;
    if (o.batch) cfg["train"]["batch"] = *o.batch;
  } else if (command == "eval-dynamics") {
    if (o.epochs) cfg["predictor"]["epochs"] = *o.epochs;
    if (o.batch) cfg["predictor"]["batch"] = *o.batch;
  }
  if (!o.ks.empty()) cfg["retrieval"]["ks"] = parse_ks(o.ks);
  if (o.gallery) cfg["retrieval"]["gallery_size"] = *o.gallery;
  if (!o.direction.empty()) cfg["retrieval"]["direction"] = o.direction;
  if (command == "eval-dynamics") cfg["dynamics"]["baseline"] = o.baseline;
  cfg["command"] = command;
  return cfg;
}

fs::path make_run_dir(const fs::path& root, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  fs::path dir = root / (command + "_" + stamp);
  for (int i = 2; fs::exists(dir); ++i) dir = root / (command + "_" + stamp + "_" + std::to_string(i));
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Abort{kData, "cannot create run directory " + dir.string() + ": " + ec.message()};
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Abort{kData, "cannot write " + path.string()};
}

void need_dir(const std::string& p, const char* what) {
  if (p.empty() || !fs::is_directory(p)) throw Abort{kUsage, std::string(what) + " not found: " + p};
}

/// A split directory holds manifest.json; a dataset root holds train/ and test/.
fs::path split_dir(const fs::path& root, const char* preferred) {
  if (fs::exists(root / "manifest.json")) return root;
  if (fs::exists(root / preferred / "manifest.json")) return root / preferred;
  throw Abort{kUsage, "no dataset split found at " + root.string()};
}

fs::path checkpoint_dir(const fs::path& p) {
  if (fs::exists(p / "model.bin")) return p;
  if (fs::exists(p / "final" / "model.bin")) return p / "final";
  throw Abort{kUsage, "no checkpoint found at " + p.string()};
}

std::string dump(const json& j) { return j.dump(); }

// ---------------------------------------------------------------------------
// Commands. Each returns the result JSON stored in run_config.json.

json cmd_synth(const json& cfg, const fs::path& run, const Options& o) {
  const fs::path raw = run / "raw";
  char* res = nullptr;
  check(la_synth_generate(dump(cfg.value("synth", json::object())).c_str(), (run / "dataset").c_str(), o.raw ? raw.c_str() : nullptr,
                          &res),
        "synth");
  json r = take(res);
  std::printf("dataset: %s (train %zu, test %zu samples)\n", (run / "dataset").c_str(), r["train_samples"].get<std::size_t>(),
              r["test_samples"].get<std::size_t>());
  return r;
}

json cmd_prepare(const json& cfg, const fs::path& run, const Options& o) {
  need_dir(o.input, "raw trajectory directory");
  char* res = nullptr;
  check(la_prepare(o.input.c_str(), (run / "dataset").c_str(), dump(cfg.value("prepare", json::object())).c_str(), &res), "prepare");
  json r = take(res);
  std::printf("dataset: %s (%zu trajectories, train %zu, test %zu samples)\n", (run / "dataset").c_str(),
              r["trajectories"].get<std::size_t>(), r["train_samples"].get<std::size_t>(), r["test_samples"].get<std::size_t>());
  return r;
}

void print_progress(const char* record, void*) {
  const json r = json::parse(record);
  const auto step = r["step"].get<std::size_t>();
  if (step % 50 == 0)
    std::fprintf(stderr, "step %zu epoch %zu loss %.4f tau %.4f\n", step, r["epoch"].get<std::size_t>(), r["loss_norm"].get<double>(),
                 r["tau"].get<double>());
}

json cmd_pretrain(const json& cfg, const fs::path& run, const Options& o) {
  need_dir(o.input, "dataset");
  auto ds = open_dataset(split_dir(o.input, "train"));
  const json pcfg{{"model", cfg.value("model", json::object())}, {"train", cfg.value("train", json::object())}};
  char* res = nullptr;
  check(la_pretrain(ds.get(), dump(pcfg).c_str(), run.c_str(), print_progress, nullptr, &res), "pretrain");
  json r = take(res);
  std::printf("checkpoint: %s\nloss: %.4f -> %.4f over %zu steps\n", (run / "final").c_str(), r["initial_loss"].get<double>(),
              r["final_loss"].get<double>(), r["steps"].get<std::size_t>());
  return r;
}

json cmd_eval_retrieval(const json& cfg, const fs::path& run, const Options& o) {
  need_dir(o.input, "checkpoint");
  need_dir(o.input2, "dataset");
  auto model = open_model(checkpoint_dir(o.input));
  auto ds = open_dataset(split_dir(o.input2, "test"));
  json opts = cfg.value("retrieval", json::object());
  std::vector<std::string> dirs;
  if (opts.contains("direction")) dirs.push_back(opts["direction"].get<std::string>());
  else dirs = {"s2m", "m2s"};
  json out = json::array();
  for (const auto& d : dirs) {
    opts["direction"] = d;
    char* res = nullptr;
    check(la_eval_retrieval(model.get(), ds.get(), dump(opts).c_str(), run.c_str(), &res), "eval-retrieval");
    json r = take(res);
    std::printf("%s gallery=%zu", d.c_str(), r["gallery"].get<std::size_t>());
    for (auto& [k, v] : r["accuracy"].items()) std::printf("  rank-%s %.4f", k.c_str(), v.get<double>());
    std::printf("\n");
    for (const auto& w : r["warnings"]) std::fprintf(stderr, "warning: %s\n", w.get<std::string>().c_str());
    out.push_back(r);
  }
  return out;
}

json cmd_eval_dynamics(const json& cfg, const fs::path& run, const Options& o) {
  need_dir(o.input2, "dataset");
  const bool kbm = o.baseline == "kbm";
  ModelPtr model{nullptr, la_model_free};
  if (!kbm || o.input != "none") {
    need_dir(o.input, "checkpoint");
    model = open_model(checkpoint_dir(o.input));
  }
  const fs::path root = o.input2;
  if (!fs::exists(root / "train" / "manifest.json") || !fs::exists(root / "test" / "manifest.json"))
    throw Abort{kUsage, "eval-dynamics needs a dataset root with train/ and test/: " + root.string()};
  auto train = open_dataset(root / "train");
  auto test = open_dataset(root / "test");
  const json opts{{"baseline", o.baseline},
                  {"predictor", cfg.value("predictor", json::object())},
                  {"kbm", cfg.value("kbm", json::object())}};
  char* res = nullptr;
  check(la_eval_dynamics(model.get(), train.get(), test.get(), dump(opts).c_str(), run.c_str(), &res), "eval-dynamics");
  json r = take(res);
  std::printf("%s rmse %.5f (position %.5f, quaternion %.5f) over %zu samples\n", o.baseline.c_str(), r["rmse"].get<double>(),
              r["rmse_position"].get<double>(), r["rmse_quaternion"].get<double>(), r["samples"].get<std::size_t>());
  return r;
}

json cmd_export(const json& cfg, const fs::path& run, const Options& o) {
  need_dir(o.input, "checkpoint");
  need_dir(o.input2, "dataset");
  auto model = open_model(checkpoint_dir(o.input));
  auto ds = open_dataset(split_dir(o.input2, "test"));
  const bool mask = cfg.value("retrieval", json::object()).value("mask_action", false);
  char* res = nullptr;
  check(la_export_embeddings(model.get(), ds.get(), mask ? 1 : 0, (run / "embeddings").c_str(), &res), "export");
  json r = take(res);
  std::printf("embeddings: %s (%zu rows)\n", (run / "embeddings").c_str(), r["rows"].get<std::size_t>());
  return r;
}

json cmd_plot(const json&, const fs::path& run, const Options& o) {
  need_dir(o.input, "run directory");
  char* res = nullptr;
  check(la_plot(o.input.c_str(), run.c_str(), &res), "plot");
  json r = take(res);
  for (const auto& f : r["files"]) std::printf("%s\n", f.get<std::string>().c_str());
  return r;
}

using Handler = json (*)(const json&, const fs::path&, const Options&);

int run_command(const std::string& name, Handler h, const Options& o) {
  try {
    const json cfg = build_config(name, o);
    const fs::path run = make_run_dir(o.out, name);
    json record{{"command", name},
                {"version", la_version()},
                {"inputs", {o.input, o.input2}},
                {"request", cfg},
                {"status", "running"}};
    write_json(run / "run_config.json", record);
    std::fprintf(stderr, "run directory: %s\n", run.c_str());
    try {
      record["result"] = h(cfg, run, o);
      record["status"] = "ok";
      write_json(run / "run_config.json", record);
    } catch (const Abort& a) {
      record["status"] = "failed";
      record["error"] = a.message;
      write_json(run / "run_config.json", record);
      throw;
    }
    return kOk;
  } catch (const Abort& a) {
    std::fprintf(stderr, "error: %s\n", a.message.c_str());
    return a.code;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locoalign: multimodal contrastive pre-training for off-road driving logs"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config_path, "JSON config file (a previous run_config.json also works)");
    c->add_option("--seed", o.seed, "Top-level seed for every component");
    c->add_option("--out", o.out, "Root directory for timestamped run directories")->capture_default_str();
    c->add_option("--set", o.sets, "Override any config field, e.g. --set train.peak_lr=5e-4");
  };

  struct Entry {
    const char* name;
    Handler handler;
    CLI::App* app;
  };
  std::vector<Entry> commands;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  common(synth);
  synth->add_option("--trajectories", o.trajectories, "Number of trajectories");
  synth->add_flag("--raw", o.raw, "Also write raw trajectory logs");
  commands.push_back({"synth", cmd_synth, synth});

  auto* prepare = app.add_subcommand("prepare", "Synchronize, window and split raw trajectory logs");
  common(prepare);
  prepare->add_option("raw_dir", o.input, "Directory of raw trajectories")->required();
  commands.push_back({"prepare", cmd_prepare, prepare});

  auto* pretrain = app.add_subcommand("pretrain", "Contrastive pre-training");
  common(pretrain);
  pretrain->add_option("dataset", o.input, "Dataset root or train split")->required();
  pretrain->add_option("--epochs", o.epochs, "Training epochs");
  pretrain->add_option("--batch", o.batch, "Batch size");
  pretrain->add_flag("--mask-action", o.mask_action, "Train with zeroed action windows");
  commands.push_back({"pretrain", cmd_pretrain, pretrain});

  auto* retrieval = app.add_subcommand("eval-retrieval", "Cross-modal retrieval accuracy");
  common(retrieval);
  retrieval->add_option("checkpoint", o.input, "Checkpoint directory (or a pretrain run directory)")->required();
  retrieval->add_option("dataset", o.input2, "Dataset root or test split")->required();
  retrieval->add_option("--direction", o.direction, "s2m or m2s (default: both)")->check(CLI::IsMember({"s2m", "m2s"}));
  retrieval->add_option("--ks", o.ks, "Comma-separated ranks, default 1,10,50");
  retrieval->add_option("--gallery", o.gallery, "Gallery chunk size (0: whole split)");
  retrieval->add_flag("--mask-action", o.mask_action, "Feed zeroed action windows");
  commands.push_back({"eval-retrieval", cmd_eval_retrieval, retrieval});

  auto* dynamics = app.add_subcommand("eval-dynamics", "Dynamics prediction RMSE");
  common(dynamics);
  dynamics->add_option("checkpoint", o.input, "Checkpoint directory, or 'none' with --baseline kbm")->required();
  dynamics->add_option("dataset", o.input2, "Dataset root with train/ and test/")->required();
  dynamics->add_option("--baseline", o.baseline, "pretrained, scratch or kbm")
      ->check(CLI::IsMember({"pretrained", "scratch", "kbm"}))
      ->capture_default_str();
  dynamics->add_option("--epochs", o.epochs, "Predictor training epochs");
  dynamics->add_option("--batch", o.batch, "Predictor batch size");
  commands.push_back({"eval-dynamics", cmd_eval_dynamics, dynamics});

  auto* exporter = app.add_subcommand("export", "Export the embedding table");
  common(exporter);
  exporter->add_option("checkpoint", o.input, "Checkpoint directory")->required();
  exporter->add_option("dataset", o.input2, "Dataset root or split")->required();
  exporter->add_flag("--mask-action", o.mask_action, "Embed with zeroed action windows");
  commands.push_back({"export", cmd_export, exporter});

  auto* plot = app.add_subcommand("plot", "Render loss and error curves of a run");
  common(plot);
  plot->add_option("run_dir", o.input, "Run directory to scan")->required();
  commands.push_back({"plot", cmd_plot, plot});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  for (const auto& c : commands)
    if (c.app->parsed()) return run_command(c.name, c.handler, o);
  return kUsage;
}
