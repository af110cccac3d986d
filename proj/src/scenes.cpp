#include "nprior/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nprior/rng.hpp"

namespace nprior {

namespace {

// Bilinear value noise with smoothstep interpolation.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int width, int height, int cell_px)
      : cell_(std::max(2, cell_px)),
        nx_(width / cell_ + 2),
        ny_(height / cell_ + 2),
        lattice_(size_t(nx_) * ny_) {
    for (auto& v : lattice_) v = rng.next_unit();
  }

  double at(int x, int y) const {
    const double fx = double(x) / cell_;
    const double fy = double(y) / cell_;
    const int ix = int(fx), iy = int(fy);
    const double tx = smooth(fx - ix), ty = smooth(fy - iy);
    const double a = node(ix, iy), b = node(ix + 1, iy);
    const double c = node(ix, iy + 1), d = node(ix + 1, iy + 1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  double node(int ix, int iy) const {
    return lattice_[size_t(std::min(iy, ny_ - 1)) * nx_ + size_t(std::min(ix, nx_ - 1))];
  }
  int cell_, nx_, ny_;
  std::vector<double> lattice_;
};

struct Rect {
  int x0, y0, x1, y1;  // half-open
};

Rect random_rect(Rng& rng, int w, int h, int min_side, int max_side) {
  const int sw = min_side + int(rng.next_below(uint64_t(max_side - min_side + 1)));
  const int sh = min_side + int(rng.next_below(uint64_t(max_side - min_side + 1)));
  const int x0 = int(rng.next_below(uint64_t(std::max(1, w - sw))));
  const int y0 = int(rng.next_below(uint64_t(std::max(1, h - sh))));
  return Rect{x0, y0, std::min(w, x0 + sw), std::min(h, y0 + sh)};
}

void draw_bars(Rng& rng, ImagePlane& img) {
  const int bars = 2 + int(rng.next_below(4));
  for (int i = 0; i < bars; ++i) {
    const Rect r = random_rect(rng, img.width, img.height, 4, std::max(8, img.width / 6));
    const double delta = (rng.next_unit() < 0.5 ? -1.0 : 1.0) * (0.20 + 0.25 * rng.next_unit());
    const bool horizontal = rng.next_unit() < 0.5;
    const int thickness = 3 + int(rng.next_below(6));
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x)
        if ((horizontal ? y - r.y0 : x - r.x0) < thickness) img.at(x, y) += delta;
  }
}

}  // namespace

ImagePlane make_test_plane(uint64_t seed, int width, int height) {
  Rng rng(seed, 0x5ce9e501ULL);
  ImagePlane img(width, height);

  // Textured world: low-frequency base held below the calibration levels,
  // mid-frequency texture, and per-pixel grain everywhere. The grain keeps
  // every non-calibration patch distinctly rougher than the flat cells under
  // any noise level the experiments use.
  ValueNoise coarse(rng, width, height, std::max(48, width / 3));
  ValueNoise texture(rng, width, height, 3 + int(rng.next_below(4)));
  const double lo = 0.08 + 0.04 * rng.next_unit();
  const double hi = 0.55 + 0.10 * rng.next_unit();
  const double tex_amp = 0.06 + 0.08 * rng.next_unit();
  const double grain_amp = 0.32 + 0.08 * rng.next_unit();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Rng pixel(seed ^ 0xf00dULL, uint64_t(y) * uint64_t(width) + uint64_t(x));
      img.at(x, y) = lo + (hi - lo) * coarse.at(x, y) + tex_amp * (texture.at(x, y) - 0.5) +
                     grain_amp * (pixel.next_unit() - 0.5);
    }
  }

  draw_bars(rng, img);

  // Flat calibration cells aligned to the 16-pixel partition grid, levels
  // stratified over [0.35, 0.92]. Their count tracks the default 10%
  // selection quota so the smoothness filter keeps essentially all of them.
  const int grid = 16;
  const int nx = width / grid, ny = height / grid;
  const int cells = std::min(nx * ny / 2,
                             std::max(8, int(std::lround(28.0 * double(nx * ny) / 256.0))));
  std::vector<int> order(size_t(nx) * ny);
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = 0; i + 1 < order.size() && int(i) < cells; ++i) {
    const size_t j = i + size_t(rng.next_below(uint64_t(order.size() - i)));
    std::swap(order[i], order[j]);
  }
  for (int i = 0; i < cells; ++i) {
    const double level = 0.35 + 0.57 * ((double(i) + 0.8 * rng.next_unit()) / double(cells));
    const int cx = (order[size_t(i)] % nx) * grid;
    const int cy = (order[size_t(i)] / nx) * grid;
    for (int y = cy; y < cy + grid; ++y)
      for (int x = cx; x < cx + grid; ++x) img.at(x, y) = level;
  }

  for (auto& v : img.data) v = std::clamp(v, 0.02, 0.98);
  return img;
}

ColorImage make_test_color(uint64_t seed, int width, int height) {
  // Denoising-oriented look: smooth regions, texture, edges, and flat zones
  // with correlated channels.
  Rng rng(seed, 0xc0104aULL);
  ImagePlane luma(width, height);
  ValueNoise coarse(rng, width, height, std::max(32, width / 3));
  ValueNoise medium(rng, width, height, std::max(12, width / 8));
  ValueNoise texture(rng, width, height, 3 + int(rng.next_below(4)));
  ValueNoise region(rng, width, height, std::max(24, width / 4));
  const double lo = 0.10 + 0.08 * rng.next_unit();
  const double hi = 0.70 + 0.22 * rng.next_unit();
  const double tex_amp = 0.08 + 0.12 * rng.next_unit();
  const double region_gate = 0.35 + 0.15 * rng.next_unit();
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double v = lo + (hi - lo) * (0.7 * coarse.at(x, y) + 0.3 * medium.at(x, y));
      if (region.at(x, y) > region_gate) v += tex_amp * (texture.at(x, y) - 0.5);
      luma.at(x, y) = v;
    }
  draw_bars(rng, luma);
  const int tiles = std::max(4, width * height / (96 * 96));
  for (int i = 0; i < tiles; ++i) {
    const double level = 0.20 + 0.70 * rng.next_unit();
    const Rect r = random_rect(rng, width, height, 20, 44);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) luma.at(x, y) = level;
  }

  ColorImage img(width, height);
  for (int c = 0; c < 3; ++c) {
    ValueNoise tint(rng, width, height, std::max(24, width / 4));
    const double gain = 0.72 + 0.28 * rng.next_unit();
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double v = gain * luma.at(x, y) + 0.08 * (tint.at(x, y) - 0.5);
        img.planes[size_t(c)].at(x, y) = std::clamp(v, 0.02, 0.98);
      }
  }
  return img;
}

std::vector<ImagePlane> make_plane_suite(size_t count, int width, int height, uint64_t seed0) {
  std::vector<ImagePlane> suite;
  suite.reserve(count);
  for (size_t i = 0; i < count; ++i)
    suite.push_back(make_test_plane(seed0 + i, width, height));
  return suite;
}

std::vector<ColorImage> make_color_suite(size_t count, int width, int height, uint64_t seed0) {
  std::vector<ColorImage> suite;
  suite.reserve(count);
  for (size_t i = 0; i < count; ++i)
    suite.push_back(make_test_color(seed0 + i, width, height));
  return suite;
}

}  // namespace nprior
