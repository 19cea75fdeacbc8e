#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ulb::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
  std::string color = "#1f77b4";
  bool dashed = false;
  bool draw_line = true;
  bool draw_markers = true;
};

inline const char* default_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return palette[i % 8];
}

// Static line/scatter chart with linear axes. Good enough for result
// displays; not a general plotting library.
struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 760;
  int height = 480;

  void save(const std::string& path) const {
    const double ml = 72, mr = 160, mt = 48, mb = 56;
    const double pw = width - ml - mr;
    const double ph = height - mt - mb;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : series) {
      for (const auto& [x, y] : s.points) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
    if (xmin > xmax) {
      xmin = 0;
      xmax = 1;
      ymin = 0;
      ymax = 1;
    }
    if (xmax - xmin < 1e-12) {
      xmin -= 0.5;
      xmax += 0.5;
    }
    if (ymax - ymin < 1e-12) {
      ymin -= 0.5;
      ymax += 0.5;
    }
    const double xpad = 0.04 * (xmax - xmin), ypad = 0.06 * (ymax - ymin);
    xmin -= xpad;
    xmax += xpad;
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(4);
      os << v;
      return os.str();
    };

    std::ostringstream out;
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' viewBox='0 0 " << width << ' ' << height << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << width / 2 << "' y='24' text-anchor='middle' font-size='15' "
           "font-family='sans-serif'>"
        << title << "</text>\n";

    // gridlines and tick labels
    for (int t = 0; t <= 5; ++t) {
      const double fx = xmin + (xmax - xmin) * t / 5.0;
      const double fy = ymin + (ymax - ymin) * t / 5.0;
      out << "<line x1='" << px(fx) << "' y1='" << mt << "' x2='" << px(fx) << "' y2='"
          << mt + ph << "' stroke='#e0e0e0'/>\n"
          << "<line x1='" << ml << "' y1='" << py(fy) << "' x2='" << ml + pw << "' y2='" << py(fy)
          << "' stroke='#e0e0e0'/>\n"
          << "<text x='" << px(fx) << "' y='" << mt + ph + 18
          << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << num(fx)
          << "</text>\n"
          << "<text x='" << ml - 6 << "' y='" << py(fy) + 4
          << "' text-anchor='end' font-size='11' font-family='sans-serif'>" << num(fy)
          << "</text>\n";
    }
    out << "<rect x='" << ml << "' y='" << mt << "' width='" << pw << "' height='" << ph
        << "' fill='none' stroke='#444'/>\n"
        << "<text x='" << ml + pw / 2 << "' y='" << height - 12
        << "' text-anchor='middle' font-size='13' font-family='sans-serif'>" << x_label
        << "</text>\n"
        << "<text x='16' y='" << mt + ph / 2
        << "' text-anchor='middle' font-size='13' font-family='sans-serif' transform='rotate(-90 "
           "16 "
        << mt + ph / 2 << ")'>" << y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
      const Series& s = series[si];
      if (s.draw_line && s.points.size() > 1) {
        out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1.8'";
        if (s.dashed) out << " stroke-dasharray='7,5'";
        out << " points='";
        for (const auto& [x, y] : s.points) out << px(x) << ',' << py(y) << ' ';
        out << "'/>\n";
      }
      if (s.draw_markers) {
        for (const auto& [x, y] : s.points) {
          out << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3' fill='" << s.color
              << "'/>\n";
        }
      }
      // legend
      const double ly = mt + 16 + 18 * static_cast<double>(si);
      out << "<line x1='" << ml + pw + 10 << "' y1='" << ly << "' x2='" << ml + pw + 34
          << "' y2='" << ly << "' stroke='" << s.color << "' stroke-width='1.8'"
          << (s.dashed ? " stroke-dasharray='7,5'" : "") << "/>\n"
          << "<text x='" << ml + pw + 38 << "' y='" << ly + 4
          << "' font-size='11' font-family='sans-serif'>" << s.label << "</text>\n";
    }
    out << "</svg>\n";

    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("svg: cannot write " + path);
    file << out.str();
  }
};

}  // namespace ulb::svg
