#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rainshield/image_io.hpp"

namespace rainshield {

struct PlotSeries {
  std::string name;
  /// One value per x position; NaN leaves a gap.
  std::vector<double> y;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// Categorical x positions, evenly spaced.
  std::vector<std::string> x_ticks;
  std::vector<PlotSeries> series;
  int width = 640;
  int height = 420;
};

/// Renders a static RGB line chart with axes, ticks, and a legend.
Raster render_line_plot(const LinePlot& plot);

/// Draws `text` with a 5x7 bitmap font at integer `scale`; lowercase renders
/// as uppercase and unknown glyphs as a box. Returns the advance in pixels.
int draw_text(Raster& r, int x, int y, const std::string& text, std::array<std::uint8_t, 3> color, int scale = 1);
int text_width(const std::string& text, int scale = 1);

}  // namespace rainshield
