#include "nprior/prior_net.hpp"

#include <cmath>

#include <json.hpp>

#include "nprior/checkpoint.hpp"
#include "nprior/errors.hpp"
#include "nprior/rng.hpp"

namespace nprior {

namespace {

nlohmann::json config_json(const PriorNetConfig& cfg) {
  return nlohmann::json{{"patch_size", cfg.patch_size},
                        {"patches_per_image", cfg.patches_per_image},
                        {"conv_widths", cfg.conv_widths},
                        {"fc_hidden", cfg.fc_hidden}};
}

PriorNetConfig config_from_json(const nlohmann::json& j) {
  PriorNetConfig cfg;
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.patches_per_image = j.at("patches_per_image").get<int>();
  cfg.conv_widths = j.at("conv_widths").get<std::vector<int>>();
  cfg.fc_hidden = j.at("fc_hidden").get<int>();
  return cfg;
}

Tensor crop_tensor(const ColorImage& image, int x0, int y0, int size) {
  Tensor t(Shape{3, size, size});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        t.value()[(size_t(c) * size + y) * size + x] = image.planes[size_t(c)].at(x0 + x, y0 + y);
  return t;
}

}  // namespace

PriorNet::PriorNet(PriorNetConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  if (cfg_.conv_widths.empty()) throw InvalidSpecError("prior net needs conv layers");
  int ci = 3;
  int extent = cfg_.patch_size;
  for (size_t i = 0; i < cfg_.conv_widths.size(); ++i) {
    const int co = cfg_.conv_widths[i];
    const std::string tag = "conv" + std::to_string(i);
    conv_w_.push_back(params_.add(tag + ".w", Shape{co, ci, 3, 3},
                                  1.0 / std::sqrt(9.0 * ci), init_seed)
                          .tensor);
    conv_b_.push_back(params_.add(tag + ".b", Shape{co}, 0.0, init_seed).tensor);
    ci = co;
    extent = (extent - 1) / 2 + 1;  // stride-2 output extent
  }
  flat_dim_ = ci * extent * extent;
  fc1_w_ = params_.add("fc1.w", Shape{cfg_.fc_hidden, flat_dim_},
                       1.0 / std::sqrt(double(flat_dim_)), init_seed)
               .tensor;
  fc1_b_ = params_.add("fc1.b", Shape{cfg_.fc_hidden}, 0.0, init_seed).tensor;
  fc2_w_ = params_.add("fc2.w", Shape{2, cfg_.fc_hidden},
                       1.0 / std::sqrt(double(cfg_.fc_hidden)), init_seed)
               .tensor;
  fc2_b_ = params_.add("fc2.b", Shape{2}, 0.0, init_seed).tensor;
}

Tensor PriorNet::forward_patch(const Tensor& patch) const {
  if (patch.rank() != 3 || patch.dim(0) != 3 || patch.dim(1) != cfg_.patch_size ||
      patch.dim(2) != cfg_.patch_size)
    throw ShapeMismatchError("prior net expects a {3,p,p} patch");
  Tensor x = patch;
  for (size_t i = 0; i < conv_w_.size(); ++i)
    x = gelu(conv3x3(x, conv_w_[i], conv_b_[i], /*stride=*/2));
  Tensor flat = reshape(x, Shape{flat_dim_});
  Tensor hidden = gelu(affine(flat, fc1_w_, fc1_b_));
  return affine(hidden, fc2_w_, fc2_b_);
}

Tensor PriorNet::forward_image(const ColorImage& image, uint64_t seed) const {
  const int p = cfg_.patch_size;
  if (image.width < p || image.height < p)
    throw ImageTooSmallError("image smaller than the prior-net patch size");
  Rng rng(seed, 0x9a7c4e5ULL);
  Tensor sum;
  for (int j = 0; j < cfg_.patches_per_image; ++j) {
    const int x0 = int(rng.next_below(uint64_t(image.width - p + 1)));
    const int y0 = int(rng.next_below(uint64_t(image.height - p + 1)));
    Tensor logits = forward_patch(crop_tensor(image, x0, y0, p));
    sum = j == 0 ? logits : add(sum, logits);
  }
  return sigmoid(scale(sum, 1.0 / cfg_.patches_per_image));
}

NoisePrior PriorNet::predict(const ColorImage& image, uint64_t seed) const {
  const Tensor out = forward_image(image, seed);
  return NoisePrior{out.value()[0], out.value()[1]};
}

std::vector<double> train_prior_net(PriorNet& net, const std::vector<LabeledImage>& dataset,
                                    const PriorNetTrainConfig& config) {
  if (dataset.empty()) throw DataEmptyError("prior-net training set is empty");
  auto& params = net.params();
  params.set_requires_grad(true);
  AdamConfig adam;
  adam.lr = config.lr_max;
  AdamOptimizer opt(adam);
  const int batch = std::max(1, config.batch);
  std::vector<double> curve;
  curve.reserve(size_t(std::max<long>(0, config.steps)));
  for (long t = 0; t < config.steps; ++t) {
    const double lr = cosine_lr(t, config.steps, config.lr_max, config.lr_min);
    params.zero_grads();
    Rng rng(config.seed, 0x7e57ULL + uint64_t(t));
    double step_loss = 0.0;
    for (int j = 0; j < batch; ++j) {
      const auto& item = dataset[size_t(rng.next_below(dataset.size()))];
      const uint64_t patch_seed = rng.next_u64();
      Tape tape;
      Tensor pred = net.forward_image(item.image, patch_seed);
      Tensor target(Shape{2}, std::vector<double>{item.target.sigma_s, item.target.sigma_r});
      Tensor loss = scale(l1_loss(pred, target), 1.0 / batch);
      tape.backward(loss);
      step_loss += loss.item();
    }
    opt.step(params, lr);
    curve.push_back(step_loss);
  }
  params.set_requires_grad(false);
  return curve;
}

void save_prior_net(const PriorNet& net, const std::string& path) {
  save_checkpoint(net.params(), path,
                  nlohmann::json{{"model", "prior_net"}, {"config", config_json(net.config())}});
}

PriorNet load_prior_net(const std::string& path) {
  const nlohmann::json manifest = read_checkpoint_meta(path);
  if (!manifest.contains("meta") || !manifest["meta"].contains("config"))
    throw UnsupportedFormatError("checkpoint manifest lacks a prior-net config: " + path);
  PriorNet net(config_from_json(manifest["meta"]["config"]), 0);
  load_checkpoint(net.params(), path);
  return net;
}

}  // namespace nprior
