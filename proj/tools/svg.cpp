#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace nhfield::cli {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const Chart& chart) {
  std::vector<Series> data = chart.series;
  if (chart.log_y) {
    for (auto& s : data) {
      Series kept{s.label, {}, {}};
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (std::abs(s.y[i]) > 0.0 && std::isfinite(s.y[i])) {
          kept.x.push_back(s.x[i]);
          kept.y.push_back(std::log10(std::abs(s.y[i])));
        }
      }
      s = std::move(kept);
    }
  }

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = x0, y1 = -x0;
  for (const auto& s : data) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0.0, x1 = 1.0;
  if (!(y0 <= y1)) y0 = 0.0, y1 = 1.0;
  if (x1 - x0 == 0.0) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 == 0.0) y0 -= 0.5, y1 += 0.5;

  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth
     << "\" height=\"" << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft << "\" y=\"24\" font-size=\"15\">" << escape(chart.title)
     << "</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw
     << "\" height=\"" << ph << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0;
    const double fy = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << px(fx) << "\" y=\"" << kTop + ph + 16
       << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4
       << "\" text-anchor=\"end\">" << num(fy) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 16
     << "\" text-anchor=\"middle\">" << escape(chart.x_label) << "</text>\n";
  const std::string ylab = chart.log_y ? "log10 |" + chart.y_label + "|" : chart.y_label;
  os << "<text transform=\"translate(18," << kTop + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << escape(ylab) << "</text>\n";

  for (std::size_t k = 0; k < data.size(); ++k) {
    const Series& s = data[k];
    const char* colour = kPalette[k % (sizeof kPalette / sizeof *kPalette)];
    if (chart.points) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
           << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
      }
    } else if (!s.x.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
      // Thin long series; a few thousand vertices are plenty on screen.
      const std::size_t stride = std::max<std::size_t>(1, s.x.size() / 2000);
      for (std::size_t i = 0; i < s.x.size(); i += stride) {
        os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      }
      os << px(s.x.back()) << ',' << py(s.y.back()) << "\"/>\n";
    }
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    os << "<rect x=\"" << kWidth - kRight + 12 << "\" y=\"" << ly - 9
       << "\" width=\"12\" height=\"12\" fill=\"" << colour << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight + 30 << "\" y=\"" << ly + 1 << "\">"
       << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace nhfield::cli
