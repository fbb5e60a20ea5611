#include "gibbsdiag_cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace gibbsdiag::cli {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 360.0;
constexpr double kLeft = 56.0;
constexpr double kRight = 16.0;
constexpr double kTop = 32.0;
constexpr double kBottom = 44.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

void open_svg(std::ostringstream& s, const std::string& title) {
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
    << escape(title) << "</text>\n";
}

void axes(std::ostringstream& s, const Frame& f, const std::string& x_label) {
  s << "<line x1=\"" << kLeft << "\" y1=\"" << f.py(f.y0) << "\" x2=\"" << kWidth - kRight
    << "\" y2=\"" << f.py(f.y0) << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
    << f.py(f.y0) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    s << "<text x=\"" << f.px(xv) << "\" y=\"" << kHeight - kBottom + 14
      << "\" text-anchor=\"middle\">" << num(xv) << "</text>\n"
      << "<text x=\"" << kLeft - 4 << "\" y=\"" << f.py(yv) + 4 << "\" text-anchor=\"end\">"
      << num(yv) << "</text>\n";
  }
  if (!x_label.empty()) {
    s << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 8 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  }
}

}  // namespace

std::string histogram_svg(const std::vector<double>& samples, const HistogramPlot& plot) {
  std::ostringstream s;
  open_svg(s, plot.title);
  if (samples.empty()) {
    s << "</svg>\n";
    return s.str();
  }
  auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const std::size_t bins = std::max<std::size_t>(plot.bins, 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> density(bins, 0.0);
  for (double v : samples) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    density[std::min(b, bins - 1)] += 1.0;
  }
  for (double& d : density) d /= static_cast<double>(samples.size()) * width;

  std::vector<double> ref;
  if (plot.reference_density) {
    for (int i = 0; i <= 200; ++i) ref.push_back(plot.reference_density(lo + (hi - lo) * i / 200.0));
  }
  double top = *std::max_element(density.begin(), density.end());
  for (double r : ref) {
    if (std::isfinite(r)) top = std::max(top, r);
  }
  const Frame f{lo, hi, 0.0, top > 0.0 ? top * 1.05 : 1.0};

  for (std::size_t b = 0; b < bins; ++b) {
    const double x = lo + width * static_cast<double>(b);
    s << "<rect x=\"" << f.px(x) << "\" y=\"" << f.py(density[b]) << "\" width=\""
      << std::max(f.px(x + width) - f.px(x) - 1.0, 0.5) << "\" height=\""
      << f.py(0.0) - f.py(density[b]) << "\" fill=\"#9ecae1\"/>\n";
  }
  if (!ref.empty()) {
    s << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"1.5\" points=\"";
    for (int i = 0; i <= 200; ++i) {
      if (!std::isfinite(ref[static_cast<std::size_t>(i)])) continue;
      s << f.px(lo + (hi - lo) * i / 200.0) << ',' << f.py(ref[static_cast<std::size_t>(i)]) << ' ';
    }
    s << "\"/>\n";
  }
  for (double m : plot.markers) {
    if (m < lo || m > hi) continue;
    s << "<line x1=\"" << f.px(m) << "\" y1=\"" << kTop << "\" x2=\"" << f.px(m) << "\" y2=\""
      << f.py(0.0) << "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
  }
  axes(s, f, plot.x_label);
  s << "</svg>\n";
  return s.str();
}

std::string line_chart_svg(const std::vector<double>& x,
                           const std::vector<std::vector<double>>& series,
                           const std::vector<std::string>& names, const std::string& title,
                           std::optional<double> reference_line) {
  std::ostringstream s;
  open_svg(s, title);
  if (x.size() < 2 || series.empty()) {
    s << "</svg>\n";
    return s.str();
  }
  double lo = reference_line.value_or(series.front().front());
  double hi = lo;
  for (const auto& line : series) {
    for (double v : line) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi <= lo) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  const Frame f{x.front(), x.back(), lo - pad, hi + pad};
  if (reference_line) {
    s << "<line x1=\"" << kLeft << "\" y1=\"" << f.py(*reference_line) << "\" x2=\""
      << kWidth - kRight << "\" y2=\"" << f.py(*reference_line)
      << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % (sizeof kPalette / sizeof *kPalette)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < x.size() && i < series[k].size(); ++i) {
      if (std::isfinite(series[k][i])) s << f.px(x[i]) << ',' << f.py(series[k][i]) << ' ';
    }
    s << "\"/>\n";
    if (k < names.size()) {
      s << "<text x=\"" << kWidth - kRight - 4 << "\" y=\"" << kTop + 14.0 * static_cast<double>(k)
        << "\" text-anchor=\"end\" fill=\"" << color << "\">" << escape(names[k]) << "</text>\n";
    }
  }
  axes(s, f, "");
  s << "</svg>\n";
  return s.str();
}

}  // namespace gibbsdiag::cli
