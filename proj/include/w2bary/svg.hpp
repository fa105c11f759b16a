#pragma once

// Standalone SVG scatter plots for 2-D diagnostics.

#include <string>
#include <vector>

#include <Eigen/Core>

namespace w2bary {

struct ScatterSeries {
  std::string label;
  std::string color;       // any SVG color, e.g. "#1f77b4"
  Eigen::MatrixXd points;  // B x 2
};

struct ScatterPanel {
  std::string title;
  std::vector<ScatterSeries> series;
};

struct SvgOptions {
  int panel_size = 320;    // pixels, square panels
  double point_radius = 1.2;
  double opacity = 0.5;
  bool shared_axes = true;  // one data window for all panels
};

/// Panels laid out left to right, each with a frame, a title and a legend.
/// Throws ValidationError for series that are not two-dimensional.
std::string render_scatter_svg(const std::vector<ScatterPanel>& panels, const SvgOptions& opts = {});

/// Color for series index i from a fixed qualitative palette.
std::string palette_color(std::size_t i);

}  // namespace w2bary
