#pragma once

#include <utility>
#include <vector>

#include "nprior/image.hpp"
#include "nprior/noise.hpp"

namespace nprior {

// 10 * log10(1 / MSE) for unit-range images; +inf sentinel when MSE == 0.
double psnr(const ImagePlane& a, const ImagePlane& b);
double psnr(const ColorImage& a, const ColorImage& b);

// Mean absolute percentage error per prior component.
std::pair<double, double> mape(const std::vector<NoisePrior>& estimates, const NoisePrior& truth);

}  // namespace nprior
