#include "w2bary/svg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "w2bary/errors.hpp"

namespace w2bary {

namespace {

struct Window {
  double x0 = std::numeric_limits<double>::infinity();
  double x1 = -std::numeric_limits<double>::infinity();
  double y0 = std::numeric_limits<double>::infinity();
  double y1 = -std::numeric_limits<double>::infinity();

  void add(const Eigen::MatrixXd& p) {
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      if (!std::isfinite(p(i, 0)) || !std::isfinite(p(i, 1))) continue;
      x0 = std::min(x0, p(i, 0));
      x1 = std::max(x1, p(i, 0));
      y0 = std::min(y0, p(i, 1));
      y1 = std::max(y1, p(i, 1));
    }
  }

  // Square window with a 5% margin; degenerate data gets a unit window.
  void finish() {
    if (!(x0 <= x1)) x0 = x1 = 0.0;
    if (!(y0 <= y1)) y0 = y1 = 0.0;
    const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
    double half = 0.5 * std::max(x1 - x0, y1 - y0) * 1.05;
    if (!(half > 0.0)) half = 1.0;
    x0 = cx - half;
    x1 = cx + half;
    y0 = cy - half;
    y1 = cy + half;
  }
};

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

}  // namespace

std::string palette_color(std::size_t i) {
  static constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return kPalette[i % kPalette.size()];
}

std::string render_scatter_svg(const std::vector<ScatterPanel>& panels, const SvgOptions& opts) {
  if (panels.empty()) throw ValidationError("render_scatter_svg: no panels");
  for (const auto& panel : panels)
    for (const auto& s : panel.series)
      if (s.points.cols() != 2) throw ValidationError("render_scatter_svg: series '" + s.label + "' is not 2-D");

  const int size = opts.panel_size;
  const int title_h = 24, legend_line = 14, pad = 10;
  std::size_t max_series = 0;
  for (const auto& panel : panels) max_series = std::max(max_series, panel.series.size());
  const int legend_h = static_cast<int>(max_series) * legend_line + pad;
  const int width = static_cast<int>(panels.size()) * (size + pad) + pad;
  const int height = title_h + size + legend_h + pad;

  Window shared;
  if (opts.shared_axes)
    for (const auto& panel : panels)
      for (const auto& s : panel.series) shared.add(s.points);
  shared.finish();

  std::ostringstream svg;
  svg.precision(6);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    Window w = shared;
    if (!opts.shared_axes) {
      w = Window{};
      for (const auto& s : panel.series) w.add(s.points);
      w.finish();
    }
    const double left = pad + static_cast<double>(p) * (size + pad);
    const double top = title_h;
    auto px = [&](double x) { return left + (x - w.x0) / (w.x1 - w.x0) * size; };
    auto py = [&](double y) { return top + (w.y1 - y) / (w.y1 - w.y0) * size; };

    svg << "<g>\n";
    svg << "<text x=\"" << left + size / 2.0 << "\" y=\"" << title_h - 8
        << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(panel.title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << size << "\" height=\"" << size
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (const auto& s : panel.series) {
      svg << "<g fill=\"" << escape(s.color) << "\" fill-opacity=\"" << opts.opacity << "\">\n";
      for (Eigen::Index i = 0; i < s.points.rows(); ++i) {
        if (!std::isfinite(s.points(i, 0)) || !std::isfinite(s.points(i, 1))) continue;
        svg << "<circle cx=\"" << px(s.points(i, 0)) << "\" cy=\"" << py(s.points(i, 1)) << "\" r=\""
            << opts.point_radius << "\"/>\n";
      }
      svg << "</g>\n";
    }
    for (std::size_t k = 0; k < panel.series.size(); ++k) {
      const double ly = top + size + pad + static_cast<double>(k) * legend_line + 4;
      svg << "<circle cx=\"" << left + 6 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\""
          << escape(panel.series[k].color) << "\"/>\n";
      svg << "<text x=\"" << left + 14 << "\" y=\"" << ly << "\">" << escape(panel.series[k].label) << "</text>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace w2bary
