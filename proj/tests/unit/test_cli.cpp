// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <doctest.h>
#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("locoalign_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

/// Runs the CLI with `args`; stdout and stderr go to <out>/cli.log.
int cli(const std::string& args, const fs::path& log_dir) {
  const std::string cmd = std::string(LOCOALIGN_CLI) + " " + args + " > " + (log_dir / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string log_of(const fs::path& dir) {
  std::ifstream in(dir / "cli.log");
  return {std::istreambuf_iterator<char>(in), {}};
}

/// The single run directory created under `root` for `command`.
fs::path run_dir(const fs::path& root, const std::string& command) {
  fs::path found;
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && e.path().filename().string().rfind(command + "_", 0) == 0) {
      found = e.path();
      ++n;
    }
  REQUIRE(n == 1);
  return found;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kSmall = "--set synth.duration_s=12 --set synth.world_size=120 --set synth.regions=12 --set synth.image_height=16 "
                     "--set synth.image_width=16";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  const auto d = fresh("usage");
  CHECK(cli("", d) == 1);
  CHECK(cli("frobnicate", d) == 1);
  CHECK(cli("pretrain --out " + d.string() + " /nonexistent/dataset", d) == 1);
  CHECK(cli("synth --out " + d.string() + " --set synth.a_max=-1", d) == 1);
  CHECK(log_of(d).find("error:") != std::string::npos);
  CHECK(cli("synth --out " + d.string() + " --set nokey", d) == 1);
  CHECK(cli("--help", d) == 0);
}

TEST_CASE("synth with the same seed writes identical datasets and records the run") {
  const auto d = fresh("synth");
  REQUIRE(cli("synth --trajectories 4 --seed 9 " + std::string(kSmall) + " --out " + (d / "a").string(), d) == 0);
  REQUIRE(cli("synth --trajectories 4 --seed 9 " + std::string(kSmall) + " --out " + (d / "b").string(), d) == 0);
  const auto a = run_dir(d / "a", "synth"), b = run_dir(d / "b", "synth");
  const auto rec = read_json(a / "run_config.json");
  CHECK(rec["status"] == "ok");
  CHECK(rec["request"]["synth"]["seed"] == 9);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "dataset")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a);
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
  }
  CHECK(files >= 9);

  // A recorded run_config.json replays the same request.
  REQUIRE(cli("synth --config " + (a / "run_config.json").string() + " --out " + (d / "c").string(), d) == 0);
  const auto c = run_dir(d / "c", "synth");
  CHECK(slurp(c / "dataset" / "train" / "loco.f32") == slurp(a / "dataset" / "train" / "loco.f32"));
}

TEST_CASE("pretraining on an empty dataset exits with 1") {
  const auto d = fresh("empty");
  REQUIRE(cli("synth --trajectories 4 " + std::string(kSmall) + " --out " + d.string(), d) == 0);
  const auto src = run_dir(d, "synth") / "dataset" / "train";
  const auto empty = d / "empty";
  fs::create_directories(empty);
  auto m = read_json(src / "manifest.json");
  m["count"] = 0;
  m["samples"] = json::array();
  for (auto& [name, blob] : m["blobs"].items()) {
    blob["bytes"] = 0;
    std::ofstream(empty / blob["file"].get<std::string>(), std::ios::binary);
  }
  std::ofstream(empty / "manifest.json") << m.dump(2);
  CHECK(cli("pretrain --out " + (d / "runs").string() + " " + empty.string(), d) == 1);
  CHECK(read_json(run_dir(d / "runs", "pretrain") / "run_config.json")["status"] == "failed");
}

TEST_CASE("corrupt inputs exit with 2") {
  const auto d = fresh("corrupt");
  const auto bad = d / "bad";
  fs::create_directories(bad);
  std::ofstream(bad / "manifest.json") << "{ truncated";
  CHECK(cli("pretrain --out " + (d / "runs").string() + " " + bad.string(), d) == 2);
  const auto ck = d / "ck";
  fs::create_directories(ck);
  std::ofstream(ck / "model.bin") << "nope";
  CHECK(cli("export --out " + (d / "runs").string() + " " + ck.string() + " " + bad.string(), d) == 2);
}

TEST_CASE("end-to-end smoke run finishes within a minute") {
  const auto d = fresh("smoke");
  const auto t0 = std::chrono::steady_clock::now();
  const std::string out = " --out " + d.string();
  REQUIRE(cli("synth --trajectories 8" + out, d) == 0);
  const auto data = run_dir(d, "synth") / "dataset";
  REQUIRE(cli("pretrain --epochs 2 --batch 16" + out + " " + data.string(), d) == 0);
  const auto pre = run_dir(d, "pretrain");
  REQUIRE(cli("eval-retrieval --ks 1,5,10" + out + " " + pre.string() + " " + data.string(), d) == 0);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("smoke run: " << seconds << " s");
  CHECK(seconds < 60.0);

  const auto ret = run_dir(d, "eval-retrieval");
  CHECK(fs::exists(ret / "retrieval_s2m_summary.csv"));
  CHECK(fs::exists(ret / "retrieval_m2s_summary.csv"));
  CHECK(read_json(ret / "run_config.json")["result"].size() == 2);

  REQUIRE(cli("eval-dynamics --baseline kbm" + out + " none " + data.string(), d) == 0);
  CHECK(fs::exists(run_dir(d, "eval-dynamics") / "dynamics_kbm_per_step.csv"));
  REQUIRE(cli("export" + out + " " + pre.string() + " " + data.string(), d) == 0);
  REQUIRE(cli("plot" + out + " " + pre.string(), d) == 0);
  CHECK(fs::exists(run_dir(d, "plot") / "loss_curve.svg"));
}
