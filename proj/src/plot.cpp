#include "lgsim/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace lgsim {
namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};

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

void data_range(const std::vector<PlotSeries>& series, bool use_x, double& lo, double& hi) {
  lo = std::numeric_limits<double>::infinity();
  hi = -lo;
  for (const auto& s : series)
    for (double v : use_x ? s.x : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi == lo) hi = lo + 1.0;
}

}  // namespace

std::string svg_line_chart(const PlotSpec& spec, const std::vector<PlotSeries>& series) {
  double x0 = spec.x_min, x1 = spec.x_max, y0 = spec.y_min, y1 = spec.y_max;
  if (x0 == x1) data_range(series, true, x0, x1);
  if (y0 == y1) data_range(series, false, y0, y1);

  const double left = 64, right = 150, top = 36, bottom = 48;
  const double pw = spec.width - left - right, ph = spec.height - top - bottom;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return top + (1.0 - (v - y0) / (y1 - y0)) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) + "\" height=\"" +
       std::to_string(spec.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(spec.title) + "</text>\n";
  s += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = x0 + (x1 - x0) * i / 5.0, fy = y0 + (y1 - y0) * i / 5.0;
    s += "<line x1=\"" + num(sx(fx)) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(sx(fx)) + "\" y2=\"" +
         num(top + ph + 4) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(sx(fx)) + "\" y=\"" + num(top + ph + 18) + "\" text-anchor=\"middle\">" + tick(fx) +
         "</text>\n";
    s += "<line x1=\"" + num(left - 4) + "\" y1=\"" + num(sy(fy)) + "\" x2=\"" + num(left) + "\" y2=\"" +
         num(sy(fy)) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(left - 8) + "\" y=\"" + num(sy(fy) + 4) + "\" text-anchor=\"end\">" + tick(fy) +
         "</text>\n";
  }
  s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(spec.height - 10.0) + "\" text-anchor=\"middle\">" +
       escape(spec.x_label) + "</text>\n";
  s += "<text x=\"16\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num(top + ph / 2) + ")\">" + escape(spec.y_label) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& ser = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (std::size_t i = 0; i < std::min(ser.x.size(), ser.y.size()); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) continue;
      if (!pts.empty()) pts += ' ';
      pts += num(sx(ser.x[i])) + "," + num(sy(ser.y[i]));
    }
    if (!pts.empty()) {
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts +
           "\"/>\n";
    }
    const double ly = top + 14 + 18.0 * static_cast<double>(k);
    s += "<line x1=\"" + num(left + pw + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + pw + 32) +
         "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(left + pw + 38) + "\" y=\"" + num(ly) + "\">" + escape(ser.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace lgsim
