// Copyright (c) 2026, The locoalign authors
// SPDX-License-Identifier: Apache-2.0

#include "core/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "core/error.hpp"
#include "core/io.hpp"

namespace locoalign::tasks {

namespace fs = std::filesystem;

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

std::string render_line_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  const double left = 70, right = 150, top = 40, bottom = 50;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto yv = [&](double y) { return spec.log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!spec.log_y || y > 0); };
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (usable(s.x[i], s.y[i])) {
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, yv(s.y[i]));
        y1 = std::max(y1, yv(s.y[i]));
      }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (yv(y) - y0) / (y1 - y0)) * ph; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\"" << spec.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = x0 + (x1 - x0) * i / 4.0, fy = y0 + (y1 - y0) * i / 4.0;
    const double gx = left + pw * i / 4.0, gy = top + ph * (1.0 - i / 4.0);
    svg << "<line x1=\"" << gx << "\" y1=\"" << top << "\" x2=\"" << gx << "\" y2=\"" << top + ph << "\" stroke=\"#ddd\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << gy << "\" x2=\"" << left + pw << "\" y2=\"" << gy << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << gx << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(fx) << "</text>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">" << fmt(spec.log_y ? std::pow(10.0, fy) : fy)
        << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << spec.height - 10 << "\" text-anchor=\"middle\">" << escape(spec.x_label)
      << "</text>\n";
  svg << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << escape(spec.y_label)
      << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (usable(s.x[i], s.y[i])) svg << px(s.x[i]) << "," << py(s.y[i]) << " ";
    svg << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    svg << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly << "\" stroke=\""
        << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

Series read_csv_series(const fs::path& path, const std::string& x_col, const std::string& y_col, std::string label) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Format, "empty CSV file " + path.string());
  const auto header = split_csv(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::Format, path.string() + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t xi = column(x_col), yi = column(y_col);
  Series s;
  s.label = std::move(label);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) fail(ErrorKind::Format, path.string() + ": row " + std::to_string(row) + " has wrong arity");
    try {
      s.x.push_back(std::stod(cells[xi]));
      s.y.push_back(std::stod(cells[yi]));
    } catch (const std::exception&) {
      fail(ErrorKind::Format, path.string() + ": row " + std::to_string(row) + " is not numeric");
    }
  }
  return s;
}

std::vector<fs::path> plot_run(const fs::path& run_dir, const fs::path& out_dir) {
  if (!fs::is_directory(run_dir)) fail(ErrorKind::Usage, "not a directory: " + run_dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  auto tag = [&](const fs::path& p) {
    const auto rel = fs::relative(p.parent_path(), run_dir).string();
    return rel == "." ? std::string() : rel;
  };
  auto starts = [](const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; };
  auto ends = [](const std::string& s, const std::string& p) { return s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0; };

  std::vector<Series> loss, errors, dyn_loss;
  for (const auto& f : files) {
    const std::string name = f.filename().string();
    const std::string where = tag(f);
    if (name == "loss_curve.csv") {
      loss.push_back(read_csv_series(f, "step", "loss_norm", where.empty() ? "loss" : where));
    } else if (starts(name, "dynamics_") && ends(name, "_per_step.csv")) {
      const std::string b = name.substr(9, name.size() - 9 - 13);
      errors.push_back(read_csv_series(f, "time_s", "rmse", where.empty() ? b : where + "/" + b));
    } else if (starts(name, "dynamics_") && ends(name, "_train_loss.csv")) {
      const std::string b = name.substr(9, name.size() - 9 - 15);
      dyn_loss.push_back(read_csv_series(f, "epoch", "loss", where.empty() ? b : where + "/" + b));
    }
  }
  if (loss.empty() && errors.empty() && dyn_loss.empty())
    fail(ErrorKind::Usage, "no loss curves or error curves found under " + run_dir.string());

  io::ensure_dir(out_dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& file, const ChartSpec& spec, const std::vector<Series>& s) {
    if (s.empty()) return;
    io::write_text(out_dir / file, render_line_chart(spec, s));
    written.push_back(out_dir / file);
  };
  emit("loss_curve.svg", {"Pre-training loss", "step", "normalized loss", false}, loss);
  emit("dynamics_error.svg", {"Dynamics prediction error", "horizon (s)", "RMSE", false}, errors);
  emit("dynamics_train_loss.svg", {"Predictor training loss", "epoch", "loss", true}, dyn_loss);
  return written;
}

}  // namespace locoalign::tasks
