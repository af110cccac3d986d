#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nprior/image.hpp"
#include "nprior/noise.hpp"

namespace nprior {

// Per-patch statistics: mean luminance L_i, population variance sigma_i^2,
// and the local smoothness criterion lambda_S = sigma_i / sqrt(L_i).
struct PatchStats {
  double mean = 0.0;
  double variance = 0.0;
  double smoothness = 0.0;  // +inf sentinel when mean <= 0
  int grid_x = 0;
  int grid_y = 0;
};

struct LonpeConfig {
  int patch_size = 16;
  double select_ratio = 0.10;
  bool use_smoothness_filter = true;
  double min_mean = 1e-4;
  int min_patches = 8;
  // Only the random-subset arm (use_smoothness_filter == false) draws on it.
  uint64_t seed = 0;
};

enum class ClampFlag { kNone, kSigmaS, kSigmaR, kBoth };

struct PriorEstimate {
  NoisePrior prior;
  double residual_rms = 0.0;
  int patches_used = 0;
  ClampFlag clamped = ClampFlag::kNone;
};

PatchStats patch_stats(const PatchView& patch);

// Drops near-black patches (mean < min_mean), then keeps the
// ceil(select_ratio * n) smoothest patches (ties broken by row-major grid
// order), where n is the size of the input list. With the filter disabled a
// seeded uniform random subset of the same size is kept instead.
std::vector<PatchStats> select_smooth(const std::vector<PatchStats>& stats,
                                      const LonpeConfig& config);

// Least-squares fit of variance = a * L + b over the selected patches via
// the 2x2 normal equations; a -> sigma_s^2, b -> sigma_r^2. A negative
// coordinate is clamped to zero and the free one refit, keeping the
// boundary optimum.
PriorEstimate fit_prior(const std::vector<PatchStats>& selected);

// Full pipeline: partition -> stats -> select -> fit.
PriorEstimate estimate(const ImagePlane& plane, const LonpeConfig& config);

std::string clamp_flag_name(ClampFlag flag);

nlohmann::json to_json(const PriorEstimate& est);

}  // namespace nprior
