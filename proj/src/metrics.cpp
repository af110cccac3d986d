#include "nprior/metrics.hpp"

#include <cmath>
#include <limits>

#include "nprior/errors.hpp"

namespace nprior {

namespace {

double mse_accum(const ImagePlane& a, const ImagePlane& b, double& sum, size_t& count) {
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  count += a.data.size();
  return sum;
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

}  // namespace

double psnr(const ImagePlane& a, const ImagePlane& b) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeMismatchError("psnr: image dimensions differ");
  double sum = 0.0;
  size_t count = 0;
  mse_accum(a, b, sum, count);
  return psnr_from_mse(sum / double(count));
}

double psnr(const ColorImage& a, const ColorImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ShapeMismatchError("psnr: image dimensions differ");
  double sum = 0.0;
  size_t count = 0;
  for (int c = 0; c < 3; ++c) mse_accum(a.planes[size_t(c)], b.planes[size_t(c)], sum, count);
  return psnr_from_mse(sum / double(count));
}

std::pair<double, double> mape(const std::vector<NoisePrior>& estimates, const NoisePrior& truth) {
  if (estimates.empty()) throw DataEmptyError("mape over an empty estimate list");
  if (truth.sigma_s <= 0.0 || truth.sigma_r <= 0.0)
    throw ZeroTruthError("mape needs strictly positive truth components");
  double ds = 0.0, dr = 0.0;
  for (const auto& e : estimates) {
    ds += std::fabs(e.sigma_s - truth.sigma_s) / truth.sigma_s;
    dr += std::fabs(e.sigma_r - truth.sigma_r) / truth.sigma_r;
  }
  const double n = double(estimates.size());
  return {ds / n, dr / n};
}

}  // namespace nprior
