#pragma once

// Static SVG line charts for PR curves and training curves.

#include <string>
#include <vector>

namespace lgsim {

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  // Axis ranges; when min == max the range is taken from the data.
  double x_min = 0.0, x_max = 0.0;
  double y_min = 0.0, y_max = 0.0;
  int width = 640;
  int height = 420;
};

std::string svg_line_chart(const PlotSpec& spec, const std::vector<PlotSeries>& series);

}  // namespace lgsim
