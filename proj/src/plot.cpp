#include "rainshield/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace rainshield {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used (bit 4 = leftmost column).
struct Glyph {
  char c;
  std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'0', {14, 17, 19, 21, 25, 17, 14}},
    {'1', {4, 12, 4, 4, 4, 4, 14}},
    {'2', {14, 17, 1, 2, 4, 8, 31}},
    {'3', {31, 2, 4, 2, 1, 17, 14}},
    {'4', {2, 6, 10, 18, 31, 2, 2}},
    {'5', {31, 16, 30, 1, 1, 17, 14}},
    {'6', {6, 8, 16, 30, 17, 17, 14}},
    {'7', {31, 1, 2, 4, 8, 8, 8}},
    {'8', {14, 17, 17, 14, 17, 17, 14}},
    {'9', {14, 17, 17, 15, 1, 2, 12}},
    {'A', {14, 17, 17, 31, 17, 17, 17}},
    {'B', {30, 17, 17, 30, 17, 17, 30}},
    {'C', {14, 17, 16, 16, 16, 17, 14}},
    {'D', {28, 18, 17, 17, 17, 18, 28}},
    {'E', {31, 16, 16, 30, 16, 16, 31}},
    {'F', {31, 16, 16, 30, 16, 16, 16}},
    {'G', {14, 17, 16, 23, 17, 17, 15}},
    {'H', {17, 17, 17, 31, 17, 17, 17}},
    {'I', {14, 4, 4, 4, 4, 4, 14}},
    {'J', {7, 2, 2, 2, 2, 18, 12}},
    {'K', {17, 18, 20, 24, 20, 18, 17}},
    {'L', {16, 16, 16, 16, 16, 16, 31}},
    {'M', {17, 27, 21, 21, 17, 17, 17}},
    {'N', {17, 17, 25, 21, 19, 17, 17}},
    {'O', {14, 17, 17, 17, 17, 17, 14}},
    {'P', {30, 17, 17, 30, 16, 16, 16}},
    {'Q', {14, 17, 17, 17, 21, 18, 13}},
    {'R', {30, 17, 17, 30, 20, 18, 17}},
    {'S', {15, 16, 16, 14, 1, 1, 30}},
    {'T', {31, 4, 4, 4, 4, 4, 4}},
    {'U', {17, 17, 17, 17, 17, 17, 14}},
    {'V', {17, 17, 17, 17, 17, 10, 4}},
    {'W', {17, 17, 17, 21, 21, 21, 10}},
    {'X', {17, 17, 10, 4, 10, 17, 17}},
    {'Y', {17, 17, 17, 10, 4, 4, 4}},
    {'Z', {31, 1, 2, 4, 8, 16, 31}},
    {'.', {0, 0, 0, 0, 0, 12, 12}},
    {',', {0, 0, 0, 0, 12, 4, 8}},
    {'-', {0, 0, 0, 31, 0, 0, 0}},
    {'+', {0, 4, 4, 31, 4, 4, 0}},
    {'_', {0, 0, 0, 0, 0, 0, 31}},
    {'/', {1, 1, 2, 4, 8, 16, 16}},
    {':', {0, 12, 12, 0, 12, 12, 0}},
    {'=', {0, 0, 31, 0, 31, 0, 0}},
    {'(', {2, 4, 8, 8, 8, 4, 2}},
    {')', {8, 4, 2, 2, 2, 4, 8}},
    {'%', {24, 25, 2, 4, 8, 19, 3}},
    {'@', {14, 17, 1, 13, 21, 21, 14}},
    {'#', {10, 10, 31, 10, 31, 10, 10}},
};

constexpr std::uint8_t kUnknown[7] = {31, 17, 17, 17, 17, 17, 31};

const std::uint8_t* glyph(char c) {
  if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  for (const auto& g : kFont)
    if (g.c == c) return g.rows;
  return kUnknown;
}

using Rgb = std::array<std::uint8_t, 3>;

void put(Raster& r, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= r.width || y >= r.height) return;
  auto* p = &r.pixels[(static_cast<std::size_t>(y) * r.width + x) * 3];
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

void fill_rect(Raster& r, int x0, int y0, int x1, int y1, Rgb c) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) put(r, x, y, c);
}

// Bresenham, drawn 2 px thick.
void line(Raster& r, int x0, int y0, int x1, int y1, Rgb c, int thick = 1) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    fill_rect(r, x0, y0, x0 + thick - 1, y0 + thick - 1, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

constexpr Rgb kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                            {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kGrid{225, 225, 225};

std::string tick_label(double v, double step) {
  char buf[32];
  const int digits = step >= 1.0 ? 0 : std::min(6, static_cast<int>(std::ceil(-std::log10(step))));
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int text_width(const std::string& text, int scale) { return static_cast<int>(text.size()) * 6 * scale; }

int draw_text(Raster& r, int x, int y, const std::string& text, Rgb color, int scale) {
  int cx = x;
  for (char ch : text) {
    const auto* rows = glyph(ch);
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (rows[row] & (16 >> col))
          fill_rect(r, cx + col * scale, y + row * scale, cx + (col + 1) * scale - 1, y + (row + 1) * scale - 1,
                    color);
    cx += 6 * scale;
  }
  return cx - x;
}

Raster render_line_plot(const LinePlot& p) {
  if (p.width < 200 || p.height < 150) throw std::invalid_argument("render_line_plot: canvas too small");
  if (p.x_ticks.empty()) throw std::invalid_argument("render_line_plot: no x positions");
  for (const auto& s : p.series)
    if (s.y.size() != p.x_ticks.size())
      throw std::invalid_argument("render_line_plot: series '" + s.name + "' length mismatch");

  Raster r{p.width, p.height, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(p.width) * p.height * 3, 255)};

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : p.series)
    for (double v : s.y)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  // round the range outward to a 1-2-5 step
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  lo = std::floor(lo / step) * step;
  hi = std::ceil(hi / step) * step;

  const int left = 70, right = p.width - 170, top = 40, bottom = p.height - 50;
  const auto px = [&](std::size_t i) {
    return p.x_ticks.size() == 1 ? (left + right) / 2
                                 : left + static_cast<int>(std::lround(static_cast<double>(i) * (right - left) /
                                                                       (p.x_ticks.size() - 1)));
  };
  const auto py = [&](double v) { return bottom - static_cast<int>(std::lround((v - lo) / (hi - lo) * (bottom - top))); };

  for (double v = lo; v <= hi + step * 1e-6; v += step) {
    const int y = py(v);
    line(r, left, y, right, y, kGrid);
    const auto lab = tick_label(v, step);
    draw_text(r, left - 6 - text_width(lab), y - 3, lab, kBlack);
  }
  line(r, left, top, left, bottom, kBlack);
  line(r, left, bottom, right, bottom, kBlack);
  for (std::size_t i = 0; i < p.x_ticks.size(); ++i) {
    const int x = px(i);
    line(r, x, bottom, x, bottom + 4, kBlack);
    draw_text(r, x - text_width(p.x_ticks[i]) / 2, bottom + 8, p.x_ticks[i], kBlack);
  }
  draw_text(r, (left + right - text_width(p.title, 2)) / 2, 10, p.title, kBlack, 2);
  draw_text(r, (left + right - text_width(p.x_label)) / 2, bottom + 26, p.x_label, kBlack);
  draw_text(r, 6, top - 14, p.y_label, kBlack);

  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const Rgb c = kPalette[k % std::size(kPalette)];
    const auto& y = p.series[k].y;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i])) continue;
      fill_rect(r, px(i) - 2, py(y[i]) - 2, px(i) + 2, py(y[i]) + 2, c);
      if (i + 1 < y.size() && std::isfinite(y[i + 1])) line(r, px(i), py(y[i]), px(i + 1), py(y[i + 1]), c, 2);
    }
    const int ly = top + 4 + static_cast<int>(k) * 14;
    fill_rect(r, right + 14, ly + 2, right + 30, ly + 4, c);
    draw_text(r, right + 36, ly, p.series[k].name, kBlack);
  }
  return r;
}

}  // namespace rainshield
