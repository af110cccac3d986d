#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace nprior {

// Single-channel image, row major, nominal range [0, 1]. bit_depth records
// the quantization depth B of the integer source (0 for real-valued data);
// integer codes map to values as code * 2^-B.
struct ImagePlane {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  std::vector<double> data;

  ImagePlane() = default;
  ImagePlane(int w, int h, double fill = 0.0, int depth = 0)
      : width(w), height(h), bit_depth(depth), data(size_t(w) * size_t(h), fill) {}

  double& at(int x, int y) { return data[size_t(y) * width + x]; }
  double at(int x, int y) const { return data[size_t(y) * width + x]; }
  size_t size() const { return data.size(); }
};

// Three ImagePlane channels (R, G, B) sharing dimensions.
struct ColorImage {
  int width = 0;
  int height = 0;
  std::array<ImagePlane, 3> planes;

  ColorImage() = default;
  ColorImage(int w, int h, double fill = 0.0) : width(w), height(h) {
    planes.fill(ImagePlane(w, h, fill));
  }
};

enum class SaveFormat {
  kGray8,    // binary PGM, maxval 255
  kGray16,   // binary PGM, maxval 65535, big-endian samples
  kFloat32,  // "FLOATMAP w h\n" header + little-endian 4-byte reals
};

// Loads a PGM (P5) or FLOATMAP plane. For integer containers the declared
// bit depth B yields data = code * 2^-B clipped to [0, 1]; bit_depth <= 0
// infers B from the container maxval. Samples above 2^B - 1 raise
// BitDepthMismatchError. FLOATMAP data is passed through unclipped.
ImagePlane load_plane(const std::string& path, int bit_depth = 0);

void save_plane(const ImagePlane& plane, const std::string& path, SaveFormat format);

// Loads a PPM (P6) color image; same code-to-value convention per channel.
ColorImage load_color(const std::string& path, int bit_depth = 0);

// maxval_16 selects a 16-bit container, otherwise 8-bit.
void save_color(const ColorImage& image, const std::string& path, bool maxval_16 = false);

// View of one patch of the non-overlapping floor grid.
struct PatchView {
  const ImagePlane* plane = nullptr;
  int x0 = 0;
  int y0 = 0;
  int size = 0;
  int grid_x = 0;
  int grid_y = 0;

  double at(int dx, int dy) const { return plane->at(x0 + dx, y0 + dy); }
  int pixel_count() const { return size * size; }
};

// Partitions into exactly floor(h/O) x floor(w/O) disjoint patches; right
// and bottom remainder pixels are dropped.
std::vector<PatchView> partition_patches(const ImagePlane& plane, int patch_size);

}  // namespace nprior
