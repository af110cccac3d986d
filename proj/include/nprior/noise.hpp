#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nprior/image.hpp"

namespace nprior {

// Signal-dependent and signal-independent noise levels (sigma_s, sigma_r),
// both in [0, 1]. The implied pixel variance is sigma_s^2 * L + sigma_r^2.
struct NoisePrior {
  double sigma_s = 0.0;
  double sigma_r = 0.0;
};

enum class NoiseKind {
  kGaussian,              // additive N(0, sigma_r^2)
  kSvGaussian,            // sv_map elementwise times N(0, 1)
  kPoissonGaussian,       // heteroscedastic N(0, sigma_s^2 * L + sigma_r^2)
  kExactPoissonGaussian,  // Poisson(L / sigma_s^2) * sigma_s^2 + N(0, sigma_r^2)
};

struct NoiseSpec {
  NoiseKind kind = NoiseKind::kPoissonGaussian;
  NoisePrior prior;
  std::optional<ImagePlane> sv_map;  // per-pixel std, required iff kSvGaussian
  bool clip = false;
  uint64_t seed = 0;
};

// sigma_s^2 * L + sigma_r^2.
double pixel_variance(double luminance, const NoisePrior& prior);

// Draws one noisy realization. Per-pixel streams are derived from
// (spec.seed, pixel index), so the fill order never changes the output.
ImagePlane sample_noise(const ImagePlane& clean, const NoiseSpec& spec);

// Per-channel sampling with distinct streams per channel.
ColorImage sample_noise(const ColorImage& clean, const NoiseSpec& spec);

// (L, sigma_s^2 * L + sigma_r^2) pairs over the given luminance grid.
std::vector<std::pair<double, double>> expected_variance_curve(const NoisePrior& prior,
                                                               const std::vector<double>& grid);

std::string noise_kind_name(NoiseKind kind);
NoiseKind noise_kind_from_name(const std::string& name);

nlohmann::json to_json(const NoiseSpec& spec);
NoiseSpec noise_spec_from_json(const nlohmann::json& j);

}  // namespace nprior
