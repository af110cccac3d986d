#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nprior/image.hpp"
#include "nprior/noise.hpp"
#include "nprior/optim.hpp"
#include "nprior/tensor.hpp"

namespace nprior {

// Small learnable estimator of (sigma_s, sigma_r) from sRGB patches: four
// stride-2 3x3 convolutions with gelu, then two fully connected layers.
// Outputs pass a logistic squash so predictions stay in [0, 1]^2.
struct PriorNetConfig {
  int patch_size = 32;
  int patches_per_image = 8;
  std::vector<int> conv_widths = {8, 16, 32, 32};
  int fc_hidden = 64;
};

class PriorNet {
 public:
  PriorNet(PriorNetConfig cfg, uint64_t init_seed);

  // Pre-squash logits {2} of a single {3,p,p} patch.
  Tensor forward_patch(const Tensor& patch) const;

  // Logits averaged over patches_per_image seeded random crops, then
  // squashed. The patch layout is a pure function of (seed, image size).
  Tensor forward_image(const ColorImage& image, uint64_t seed) const;
  NoisePrior predict(const ColorImage& image, uint64_t seed) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const PriorNetConfig& config() const { return cfg_; }

 private:
  PriorNetConfig cfg_;
  ParamSet params_;
  std::vector<Tensor> conv_w_, conv_b_;
  Tensor fc1_w_, fc1_b_, fc2_w_, fc2_b_;
  int flat_dim_ = 0;
};

struct PriorNetTrainConfig {
  long steps = 600;
  int batch = 4;
  double lr_max = 1e-3;
  double lr_min = 1e-6;
  uint64_t seed = 0;
};

struct LabeledImage {
  ColorImage image;    // noisy sRGB observation
  NoisePrior target;   // ground-truth prior
};

// Minimizes L1 between the squashed prediction and the target with Adam and
// cosine annealing. Deterministic given the seed. Returns the loss curve.
std::vector<double> train_prior_net(PriorNet& net, const std::vector<LabeledImage>& dataset,
                                    const PriorNetTrainConfig& config);

void save_prior_net(const PriorNet& net, const std::string& path);
PriorNet load_prior_net(const std::string& path);

}  // namespace nprior
