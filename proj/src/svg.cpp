#include "gridflow/svg.hpp"

#include <algorithm>
#include <cmath>

namespace gridflow {
namespace {

constexpr double kWidth = 720;
constexpr double kHeight = 480;
constexpr double kLeft = 70, kRight = 20, kTop = 48, kBottom = 56;

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string render_line_chart(const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<SvgSeries>& series) {
  double x_max = 1.0, y_max = 1e-12;
  for (const SvgSeries& s : series)
    for (const auto& [x, y] : s.points) {
      x_max = std::max(x_max, x);
      if (std::isfinite(y)) y_max = std::max(y_max, y);
    }
  y_max *= 1.05;

  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + x / x_max * plot_w; };
  const auto py = [&](double y) { return kTop + plot_h - y / y_max * plot_h; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
         "\" height=\"" + num(kHeight) + "\" viewBox=\"0 0 " + num(kWidth) +
         " " + num(kHeight) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + num(kWidth / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\">" + title + "</text>\n";

  // axes
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop + plot_h) +
         "\" x2=\"" + num(kLeft + plot_w) + "\" y2=\"" + num(kTop + plot_h) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(kTop) + "\" x2=\"" +
         num(kLeft) + "\" y2=\"" + num(kTop + plot_h) +
         "\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double fx = x_max * i / 5.0;
    const double fy = y_max * i / 5.0;
    svg += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(kTop + plot_h) +
           "\" x2=\"" + num(px(fx)) + "\" y2=\"" + num(kTop + plot_h + 5) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(kTop + plot_h + 20) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" + num(fx) + "</text>\n";
    svg += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(py(fy)) +
           "\" x2=\"" + num(kLeft) + "\" y2=\"" + num(py(fy)) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + num(kLeft - 9) + "\" y=\"" + num(py(fy) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           "font-size=\"11\">" + num(fy) + "</text>\n";
  }
  svg += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" +
         num(kHeight - 14) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\">" + x_label + "</text>\n";
  svg += "<text x=\"18\" y=\"" + num(kTop + plot_h / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"13\" transform=\"rotate(-90 18 " +
         num(kTop + plot_h / 2) + ")\">" + y_label + "</text>\n";

  for (const SvgSeries& s : series) {
    if (s.points.empty()) continue;
    svg += "<polyline fill=\"none\" stroke=\"" + s.color +
           "\" stroke-width=\"1.6\" points=\"";
    for (const auto& [x, y] : s.points)
      svg += num(px(x)) + "," + num(py(std::isfinite(y) ? y : 0.0)) + " ";
    svg += "\"/>\n";
  }

  // legend
  double ly = kTop + 10;
  for (const SvgSeries& s : series) {
    const double lx = kLeft + plot_w - 130;
    svg += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" +
           num(lx + 26) + "\" y2=\"" + num(ly) + "\" stroke=\"" + s.color +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + num(lx + 32) + "\" y=\"" + num(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + s.label +
           "</text>\n";
    ly += 18;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace gridflow
