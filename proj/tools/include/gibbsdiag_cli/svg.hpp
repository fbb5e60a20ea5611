#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gibbsdiag::cli {

/// Density-scaled histogram of `samples`, optionally with a reference density
/// drawn on top as a polyline and vertical marker lines.
struct HistogramPlot {
  std::string title;
  std::string x_label;
  std::size_t bins = 40;
  std::function<double(double)> reference_density;
  std::vector<double> markers;
};

std::string histogram_svg(const std::vector<double>& samples, const HistogramPlot& plot);

/// Line chart of several series sharing x.
std::string line_chart_svg(const std::vector<double>& x,
                           const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& names, const std::string& title,
                           std::optional<double> reference_line = std::nullopt);

}  // namespace gibbsdiag::cli
