// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0
//
// Static SVG line charts of the CSV artifacts a run leaves behind.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace locoalign::tasks {

struct Series {
  std::string label;
  std::vector<double> x, y;
};

struct ChartSpec {
  std::string title, x_label, y_label;
  bool log_y = false;
  int width = 640, height = 400;
};

/// Standalone SVG document. Non-finite points are skipped.
std::string render_line_chart(const ChartSpec& spec, const std::vector<Series>& series);

/// Reads columns `x_col` and `y_col` of a headed CSV file.
Series read_csv_series(const std::filesystem::path& path, const std::string& x_col, const std::string& y_col, std::string label);

/// Scans `run_dir` recursively for loss_curve.csv, dynamics_*_per_step.csv and
/// dynamics_*_train_loss.csv and writes one chart per kind into `out_dir`.
/// Returns the written files; throws a Usage error when nothing is plottable.
std::vector<std::filesystem::path> plot_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir);

}  // namespace locoalign::tasks
