#pragma once

// Minimal static SVG line and scatter charts.

#include <string>
#include <vector>

namespace nhfield::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool points = false;  // markers instead of polylines
  bool log_y = false;   // log10 of |y|, zeros dropped
};

std::string render_svg(const Chart& chart);

}  // namespace nhfield::cli
