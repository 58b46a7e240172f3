#include "trajlens/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace trajlens::plot {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  int width, height;
  static constexpr double left = 60, right = 20, top = 40, bottom = 50;
  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

std::string header(int w, int h, const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
         "<text x=\"" + std::to_string(w / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(title) + "</text>\n";
}

std::string axes(const Frame& f, const std::string& xl, const std::string& yl) {
  std::string out;
  const double bx = Frame::left, by = f.height - Frame::bottom, tx = f.width - Frame::right;
  out += "<line x1=\"" + num(bx) + "\" y1=\"" + num(by) + "\" x2=\"" + num(tx) + "\" y2=\"" + num(by) +
         "\" stroke=\"black\"/>\n";
  out += "<line x1=\"" + num(bx) + "\" y1=\"" + num(Frame::top) + "\" x2=\"" + num(bx) + "\" y2=\"" + num(by) +
         "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0, yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    out += "<text x=\"" + num(f.px(xv)) + "\" y=\"" + num(by + 15) + "\" text-anchor=\"middle\">" + tick(xv) +
           "</text>\n";
    out += "<text x=\"" + num(bx - 5) + "\" y=\"" + num(f.py(yv) + 4) + "\" text-anchor=\"end\">" + tick(yv) +
           "</text>\n";
  }
  out += "<text x=\"" + num((bx + tx) / 2) + "\" y=\"" + num(f.height - 10.0) + "\" text-anchor=\"middle\">" +
         escape(xl) + "</text>\n";
  out += "<text x=\"15\" y=\"" + num((Frame::top + by) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " +
         num((Frame::top + by) / 2) + ")\">" + escape(yl) + "</text>\n";
  return out;
}

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
}

}  // namespace

std::string render_svg(const LineChart& c, int width, int height) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : c.series) {
    for (double v : s.x) {
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  for (double h : c.hlines) {
    y0 = std::min(y0, h);
    y1 = std::max(y1, h);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (c.y_min) y0 = *c.y_min;
  if (c.y_max) y1 = *c.y_max;
  widen(x0, x1);
  widen(y0, y1);
  const Frame f{x0, x1, y0, y1, width, height};
  std::string out = header(width, height, c.title) + axes(f, c.x_label, c.y_label);
  for (double h : c.hlines)
    out += "<line x1=\"" + num(Frame::left) + "\" y1=\"" + num(f.py(h)) + "\" x2=\"" + num(width - Frame::right) +
           "\" y2=\"" + num(f.py(h)) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  for (std::size_t i = 0; i < c.series.size(); ++i) {
    const auto& s = c.series[i];
    const std::string color = s.color.empty() ? kPalette[i % 10] : s.color;
    std::string pts;
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      pts += (pts.empty() ? "" : " ") + num(f.px(s.x[k])) + "," + num(f.py(std::clamp(s.y[k], y0, y1)));
    }
    out += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + num(width - Frame::right - 5) + "\" y=\"" + num(Frame::top + 12.0 * (i + 1)) +
           "\" text-anchor=\"end\" fill=\"" + color + "\">" + escape(s.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string render_svg(const BarChart& c, int width, int height) {
  double ymax = 0;
  for (double v : c.counts) ymax = std::max(ymax, v);
  if (ymax <= 0) ymax = 1;
  double lo = c.lo, hi = c.hi;
  widen(lo, hi);
  const Frame f{lo, hi, 0.0, ymax, width, height};
  std::string out = header(width, height, c.title) + axes(f, c.x_label, c.y_label);
  const double bw = (hi - lo) / std::max<std::size_t>(1, c.counts.size());
  for (std::size_t i = 0; i < c.counts.size(); ++i) {
    const double xa = f.px(lo + bw * i), xb = f.px(lo + bw * (i + 1));
    const double ya = f.py(c.counts[i]);
    out += "<rect x=\"" + num(xa) + "\" y=\"" + num(ya) + "\" width=\"" + num(std::max(0.0, xb - xa - 1)) +
           "\" height=\"" + num(f.py(0) - ya) + "\" fill=\"#1f77b4\"/>\n";
  }
  return out + "</svg>\n";
}

}  // namespace trajlens::plot
