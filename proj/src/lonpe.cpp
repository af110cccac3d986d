#include "nprior/lonpe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "nprior/errors.hpp"
#include "nprior/rng.hpp"

namespace nprior {

PatchStats patch_stats(const PatchView& patch) {
  const int n = patch.pixel_count();
  if (n <= 0 || patch.plane == nullptr) throw EmptyPatchError("empty patch");
  double sum = 0.0;
  for (int dy = 0; dy < patch.size; ++dy)
    for (int dx = 0; dx < patch.size; ++dx) sum += patch.at(dx, dy);
  const double mean = sum / n;
  double sq = 0.0;
  for (int dy = 0; dy < patch.size; ++dy) {
    for (int dx = 0; dx < patch.size; ++dx) {
      const double d = patch.at(dx, dy) - mean;
      sq += d * d;
    }
  }
  PatchStats stats;
  stats.mean = mean;
  stats.variance = sq / n;  // population form, matching the expectation
  stats.smoothness = mean > 0.0 ? std::sqrt(stats.variance) / std::sqrt(mean)
                                : std::numeric_limits<double>::infinity();
  stats.grid_x = patch.grid_x;
  stats.grid_y = patch.grid_y;
  return stats;
}

std::vector<PatchStats> select_smooth(const std::vector<PatchStats>& stats,
                                      const LonpeConfig& config) {
  if (stats.empty()) throw EmptyPatchError("no patch statistics to select from");
  const size_t target = size_t(std::ceil(config.select_ratio * double(stats.size())));

  std::vector<PatchStats> pool;
  pool.reserve(stats.size());
  for (const auto& s : stats)
    if (s.mean >= config.min_mean) pool.push_back(s);

  const size_t keep = std::min(target, pool.size());
  std::vector<PatchStats> selected;
  if (config.use_smoothness_filter) {
    auto row_major = [](const PatchStats& a, const PatchStats& b) {
      return a.grid_y != b.grid_y ? a.grid_y < b.grid_y : a.grid_x < b.grid_x;
    };
    std::stable_sort(pool.begin(), pool.end(), [&](const PatchStats& a, const PatchStats& b) {
      if (a.smoothness != b.smoothness) return a.smoothness < b.smoothness;
      return row_major(a, b);
    });
    selected.assign(pool.begin(), pool.begin() + keep);
  } else {
    // Seeded Fisher-Yates prefix for the random-subset arm.
    std::vector<size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), size_t(0));
    Rng rng(config.seed, 0x5e1ec7ULL);
    for (size_t i = 0; i < keep && i + 1 < idx.size(); ++i) {
      const size_t j = i + size_t(rng.next_below(uint64_t(idx.size() - i)));
      std::swap(idx[i], idx[j]);
    }
    selected.reserve(keep);
    for (size_t i = 0; i < keep; ++i) selected.push_back(pool[idx[i]]);
  }
  if (selected.size() < size_t(std::max(config.min_patches, 2)))
    throw TooFewPatchesError("only " + std::to_string(selected.size()) +
                             " patches survive selection (min " +
                             std::to_string(config.min_patches) + ")");
  return selected;
}

PriorEstimate fit_prior(const std::vector<PatchStats>& selected) {
  const size_t m = selected.size();
  if (m < 2) throw TooFewPatchesError("least squares needs at least 2 patches");

  double lo = selected[0].mean, hi = selected[0].mean;
  double s_l = 0.0, s_ll = 0.0, s_y = 0.0, s_ly = 0.0;
  for (const auto& s : selected) {
    lo = std::min(lo, s.mean);
    hi = std::max(hi, s.mean);
    s_l += s.mean;
    s_ll += s.mean * s.mean;
    s_y += s.variance;
    s_ly += s.mean * s.variance;
  }
  if (hi - lo < 1e-6)
    throw RankDeficientError("luminance spread " + std::to_string(hi - lo) +
                             " is below the rank-2 threshold 1e-6");

  const double count = double(m);
  const double denom = count * s_ll - s_l * s_l;
  double a = (count * s_ly - s_l * s_y) / denom;
  double b = (s_ll * s_y - s_l * s_ly) / denom;

  ClampFlag clamped = ClampFlag::kNone;
  if (a < 0.0) {
    // Boundary optimum: sigma_s^2 = 0, intercept refit alone.
    a = 0.0;
    b = s_y / count;
    clamped = ClampFlag::kSigmaS;
  } else if (b < 0.0) {
    b = 0.0;
    a = s_ll > 0.0 ? s_ly / s_ll : 0.0;
    clamped = ClampFlag::kSigmaR;
  }
  if (a < 0.0 || b < 0.0) {
    a = std::max(a, 0.0);
    b = std::max(b, 0.0);
    clamped = ClampFlag::kBoth;
  }

  double sq = 0.0;
  for (const auto& s : selected) {
    const double r = s.variance - (a * s.mean + b);
    sq += r * r;
  }

  PriorEstimate est;
  est.prior.sigma_s = std::sqrt(a);
  est.prior.sigma_r = std::sqrt(b);
  est.residual_rms = std::sqrt(sq / count);
  est.patches_used = int(m);
  est.clamped = clamped;
  return est;
}

PriorEstimate estimate(const ImagePlane& plane, const LonpeConfig& config) {
  const auto patches = partition_patches(plane, config.patch_size);
  std::vector<PatchStats> stats;
  stats.reserve(patches.size());
  for (const auto& p : patches) stats.push_back(patch_stats(p));
  const auto selected = select_smooth(stats, config);
  return fit_prior(selected);
}

std::string clamp_flag_name(ClampFlag flag) {
  switch (flag) {
    case ClampFlag::kNone: return "none";
    case ClampFlag::kSigmaS: return "sigma_s";
    case ClampFlag::kSigmaR: return "sigma_r";
    case ClampFlag::kBoth: return "both";
  }
  return "none";
}

nlohmann::json to_json(const PriorEstimate& est) {
  return nlohmann::json{{"sigma_s", est.prior.sigma_s},
                        {"sigma_r", est.prior.sigma_r},
                        {"residual_rms", est.residual_rms},
                        {"patches_used", est.patches_used},
                        {"clamped", clamp_flag_name(est.clamped)}};
}

}  // namespace nprior
