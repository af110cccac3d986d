#pragma once

#include <cstdint>
#include <vector>

#include "nprior/image.hpp"

namespace nprior {

// Deterministic procedural test scenes: a smooth low-frequency background,
// grain and mid-frequency texture regions, hard edges and bars, and flat
// calibration-style tiles with luminances stratified over [0.3, 0.92]. The
// tiles guarantee smooth patches at well-spread levels; the texture and
// edges exercise the smoothness filter. Zero downloads, fully seeded.
ImagePlane make_test_plane(uint64_t seed, int width, int height);
ColorImage make_test_color(uint64_t seed, int width, int height);

std::vector<ImagePlane> make_plane_suite(size_t count, int width, int height, uint64_t seed0 = 1);
std::vector<ColorImage> make_color_suite(size_t count, int width, int height, uint64_t seed0 = 1);

}  // namespace nprior
