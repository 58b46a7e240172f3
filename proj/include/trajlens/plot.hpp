#pragma once

#include <optional>
#include <string>
#include <vector>

namespace trajlens::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color;  // empty: palette
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::optional<double> y_min;
  std::optional<double> y_max;
  std::vector<double> hlines;  // dashed reference lines
};

struct BarChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> counts;
};

/// Self-contained SVG documents. Output depends only on the input, with
/// numbers printed at fixed precision.
std::string render_svg(const LineChart& chart, int width = 640, int height = 400);
std::string render_svg(const BarChart& chart, int width = 640, int height = 400);

}  // namespace trajlens::plot
