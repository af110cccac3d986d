#include "nprior/noise.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "nprior/errors.hpp"
#include "nprior/rng.hpp"

namespace nprior {

namespace {

void validate(const NoiseSpec& spec, const ImagePlane& target) {
  const auto& p = spec.prior;
  if (!(p.sigma_s >= 0.0 && p.sigma_s <= 1.0 && p.sigma_r >= 0.0 && p.sigma_r <= 1.0))
    throw InvalidSpecError("noise prior components must lie in [0, 1]");
  if (spec.kind == NoiseKind::kSvGaussian) {
    if (!spec.sv_map.has_value())
      throw InvalidSpecError("sv_gaussian requires an sv_map");
    if (spec.sv_map->width != target.width || spec.sv_map->height != target.height)
      throw InvalidSpecError("sv_map dimensions do not match the target image");
  } else if (spec.sv_map.has_value()) {
    throw InvalidSpecError("sv_map is only valid for the sv_gaussian kind");
  }
}

// stream_offset decorrelates the channels of a color image.
ImagePlane sample_plane(const ImagePlane& clean, const NoiseSpec& spec, uint64_t stream_offset) {
  ImagePlane out = clean;
  const auto& prior = spec.prior;
  const double var_s = prior.sigma_s * prior.sigma_s;
  const size_t n = clean.size();
  for (size_t i = 0; i < n; ++i) {
    Rng rng(spec.seed, stream_offset + i);
    const double clean_v = clean.data[i];
    double noisy = clean_v;
    switch (spec.kind) {
      case NoiseKind::kGaussian:
        noisy += prior.sigma_r * rng.next_normal();
        break;
      case NoiseKind::kSvGaussian:
        noisy += spec.sv_map->data[i] * rng.next_normal();
        break;
      case NoiseKind::kPoissonGaussian: {
        const double std = std::sqrt(std::max(0.0, pixel_variance(clean_v, prior)));
        noisy += std * rng.next_normal();
        break;
      }
      case NoiseKind::kExactPoissonGaussian: {
        if (var_s == 0.0) {
          // Degenerates to the Gaussian branch, same draw stream.
          noisy += prior.sigma_r * rng.next_normal();
        } else {
          const double lambda = std::max(0.0, clean_v) / var_s;
          noisy = double(sample_poisson(rng, lambda)) * var_s + prior.sigma_r * rng.next_normal();
        }
        break;
      }
    }
    if (spec.clip) noisy = std::clamp(noisy, 0.0, 1.0);
    out.data[i] = noisy;
  }
  return out;
}

}  // namespace

double pixel_variance(double luminance, const NoisePrior& prior) {
  return prior.sigma_s * prior.sigma_s * luminance + prior.sigma_r * prior.sigma_r;
}

ImagePlane sample_noise(const ImagePlane& clean, const NoiseSpec& spec) {
  validate(spec, clean);
  return sample_plane(clean, spec, 0);
}

ColorImage sample_noise(const ColorImage& clean, const NoiseSpec& spec) {
  validate(spec, clean.planes[0]);
  ColorImage out = clean;
  const uint64_t plane_stride = size_t(clean.width) * size_t(clean.height);
  for (int c = 0; c < 3; ++c)
    out.planes[c] = sample_plane(clean.planes[c], spec, uint64_t(c) * plane_stride);
  return out;
}

std::vector<std::pair<double, double>> expected_variance_curve(const NoisePrior& prior,
                                                               const std::vector<double>& grid) {
  std::vector<std::pair<double, double>> curve;
  curve.reserve(grid.size());
  for (double level : grid) curve.emplace_back(level, pixel_variance(level, prior));
  return curve;
}

std::string noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kSvGaussian: return "sv_gaussian";
    case NoiseKind::kPoissonGaussian: return "poisson_gaussian";
    case NoiseKind::kExactPoissonGaussian: return "exact_poisson_gaussian";
  }
  return "unknown";
}

NoiseKind noise_kind_from_name(const std::string& name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "sv_gaussian") return NoiseKind::kSvGaussian;
  if (name == "poisson_gaussian") return NoiseKind::kPoissonGaussian;
  if (name == "exact_poisson_gaussian") return NoiseKind::kExactPoissonGaussian;
  throw InvalidSpecError("unknown noise kind: " + name);
}

nlohmann::json to_json(const NoiseSpec& spec) {
  return nlohmann::json{{"kind", noise_kind_name(spec.kind)},
                        {"sigma_s", spec.prior.sigma_s},
                        {"sigma_r", spec.prior.sigma_r},
                        {"clip", spec.clip},
                        {"seed", spec.seed}};
}

NoiseSpec noise_spec_from_json(const nlohmann::json& j) {
  NoiseSpec spec;
  spec.kind = noise_kind_from_name(j.at("kind").get<std::string>());
  spec.prior.sigma_s = j.at("sigma_s").get<double>();
  spec.prior.sigma_r = j.at("sigma_r").get<double>();
  spec.clip = j.at("clip").get<bool>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

}  // namespace nprior
