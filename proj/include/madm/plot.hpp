#pragma once

#include <string>
#include <utility>
#include <vector>

namespace madm {

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
  bool markers_only = false;
};

/// Minimal standalone SVG line chart with axes, ticks and a legend.
/// `comment` is embedded verbatim as an XML comment.
std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series, const std::string& comment = {});

}  // namespace madm
