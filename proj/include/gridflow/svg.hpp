#pragma once

#include <string>
#include <vector>

namespace gridflow {

struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<std::pair<double, double>> points;  // (step, value)
};

/// Self-contained line chart: linear axes with ticks, one polyline per
/// series, embedded legend. No external plotting dependency.
std::string render_line_chart(const std::string& title,
                              const std::string& x_label,
                              const std::string& y_label,
                              const std::vector<SvgSeries>& series);

}  // namespace gridflow
