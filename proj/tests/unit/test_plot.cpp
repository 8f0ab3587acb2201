// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>

#include <doctest.h>

#include "core/plot.hpp"
#include "helpers.hpp"

using namespace locoalign;
using namespace locoalign::tasks;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p) << text;
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("line chart has one polyline per series and escapes labels") {
  ChartSpec spec{"loss <train>", "step", "loss", false, 640, 400};
  const auto svg = render_line_chart(spec, {{"a&b", {0, 1, 2}, {3, 2, 1}}, {"c", {0, 1}, {1, 1}}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count(svg, "<polyline") == 2);
  CHECK(svg.find("loss &lt;train&gt;") != std::string::npos);
  CHECK(svg.find("a&amp;b") != std::string::npos);
  CHECK(svg.find("nan") == std::string::npos);
}

TEST_CASE("log axis drops non-positive points") {
  ChartSpec spec{"t", "x", "y", true, 400, 300};
  const auto svg = render_line_chart(spec, {{"s", {0, 1, 2}, {0.0, 10.0, 100.0}}});
  const auto start = svg.find("points=\"") + 8;
  const auto pts = svg.substr(start, svg.find('"', start) - start);
  CHECK(count(pts, ",") == 2);
  CHECK(svg.find("inf") == std::string::npos);
}

TEST_CASE("CSV columns are read by name") {
  const auto dir = testutil::temp_dir("plot_csv");
  write(dir / "a.csv", "step,loss_raw,loss_norm\n0,5,2.5\n1,4,2\n");
  const auto s = read_csv_series(dir / "a.csv", "step", "loss_norm", "x");
  CHECK(s.x == std::vector<double>{0, 1});
  CHECK(s.y == std::vector<double>{2.5, 2});
  CHECK(testutil::error_kind([&] { read_csv_series(dir / "a.csv", "step", "tau", "x"); }) == ErrorKind::Format);
  write(dir / "b.csv", "step,loss\n0,abc\n");
  CHECK(testutil::error_kind([&] { read_csv_series(dir / "b.csv", "step", "loss", "x"); }) == ErrorKind::Format);
  write(dir / "c.csv", "");
  CHECK(testutil::error_kind([&] { read_csv_series(dir / "c.csv", "step", "loss", "x"); }) == ErrorKind::Format);
}

TEST_CASE("plotting a run directory finds every curve") {
  const auto dir = testutil::temp_dir("plot_run");
  write(dir / "pretrain" / "loss_curve.csv", "step,epoch,lr,loss_raw,loss_norm,tau\n0,0,1e-4,8,2,0.07\n1,0,2e-4,6,1.5,0.07\n");
  write(dir / "dyn" / "dynamics_kbm_per_step.csv", "step,time_s,rmse\n0,0.025,0.1\n1,0.05,0.2\n");
  write(dir / "dyn" / "dynamics_scratch_per_step.csv", "step,time_s,rmse\n0,0.025,0.05\n1,0.05,0.1\n");
  write(dir / "dyn" / "dynamics_scratch_train_loss.csv", "epoch,loss\n0,1\n1,0.5\n");
  const auto out = dir / "plots";
  const auto written = plot_run(dir, out);
  CHECK(written.size() == 3);
  std::ifstream in(out / "dynamics_error.svg");
  const std::string svg{std::istreambuf_iterator<char>(in), {}};
  CHECK(count(svg, "<polyline") == 2);
  CHECK(svg.find("dyn/kbm") != std::string::npos);

  const auto empty = testutil::temp_dir("plot_empty");
  CHECK(testutil::error_kind([&] { plot_run(empty, empty / "out"); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([&] { plot_run(empty / "missing", empty); }) == ErrorKind::Usage);
}
