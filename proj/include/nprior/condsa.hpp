#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "nprior/image.hpp"
#include "nprior/noise.hpp"
#include "nprior/optim.hpp"
#include "nprior/tensor.hpp"

namespace nprior {

// ---- conditioning primitives ----------------------------------------------

// Two fully connected 2k -> 2k layers with a gelu between.
struct EmbedFcParams {
  Tensor w1, b1, w2, b2;
};

// Builds the conditional embedding vector: sigma_s repeated k times, then
// sigma_r repeated k times, passed through fc when given (nullptr keeps the
// raw repeat). prior is a {2} tensor so the output stays differentiable in
// the prior.
Tensor embed_prior(const Tensor& prior, int k, const EmbedFcParams* fc);
Tensor embed_prior(const NoisePrior& prior, int k, const EmbedFcParams* fc);

// Linear fusion module: broadcast z over space, concat channel-wise, then
// 1x1 conv back to c channels and a 3x3 depthwise conv (zero pad).
struct LfmParams {
  Tensor pointwise;  // {c, c + 2k}
  Tensor depthwise;  // {c, 3, 3}
};
Tensor lfm(const Tensor& t, const Tensor& z, const LfmParams& params);

// Channel-wise attention: per head, A = softmax(Q Kt / alpha) row-wise and
// out = A V. q, k, v are {c, hw}; rows are expected pre-normalized. alpha is
// a positive 1-element tensor. attention_out, when given, receives the
// (concatenated) attention rows for inspection.
Tensor channel_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& alpha,
                         int heads = 1, Tensor* attention_out = nullptr);

// ---- transformer blocks -----------------------------------------------------

struct CondformerConfig {
  int base_channels = 8;  // c; latent width is c * 2^levels
  int levels = 3;
  int latent_blocks = 2;  // N
  int k = 8;              // embedding half-width; |z| = 2k
  int ffn_expansion = 2;
  int heads = 1;
  bool conditional = true;  // false: plain latent blocks, no prior path
};

nlohmann::json to_json(const CondformerConfig& cfg);
CondformerConfig condformer_config_from_json(const nlohmann::json& j);

// Pre-norm channel-attention block. Conditional blocks fuse the prior
// embedding into the query/key paths through per-block LFM and embedding
// layers; unconditional blocks skip that path entirely.
class TransformerBlock {
 public:
  TransformerBlock(ParamSet& params, const std::string& prefix, int channels, int k,
                   int ffn_expansion, int heads, bool conditional, uint64_t init_seed);

  Tensor forward(const Tensor& x) const;                       // unconditional
  Tensor forward(const Tensor& x, const Tensor& prior) const;  // prior {2}

  bool conditional() const { return conditional_; }
  int channels() const { return channels_; }
  const EmbedFcParams& embed_fc() const { return embed_fc_; }

 private:
  int channels_;
  int k_;
  int heads_;
  bool conditional_;
  Tensor ln1_gamma_, ln1_beta_, ln2_gamma_, ln2_beta_;
  Tensor wq_point_, wq_depth_, wk_point_, wk_depth_, wv_point_, wv_depth_;
  Tensor wy_, log_alpha_;
  LfmParams lfm_q_, lfm_k_;
  EmbedFcParams embed_fc_;
  Tensor ffn_w1_, ffn_w2_;
};

// Standalone conditional self-attention block application.
Tensor condsa_block(const Tensor& x, const Tensor& prior, const TransformerBlock& block);

// ---- micro denoiser -----------------------------------------------------------

Tensor color_to_tensor(const ColorImage& image);
ColorImage tensor_to_color(const Tensor& t, bool clamp01);

// U-shaped denoiser: 3x3 embed, per level one transformer block plus 2x
// space-to-depth downsample with channel doubling, N (conditionally
// prior-rectified) latent blocks, mirrored decoder with skip concats, 3x3
// projection and a global residual connection.
class MicroCondformer {
 public:
  MicroCondformer(CondformerConfig cfg, uint64_t init_seed);

  // rgb {3,h,w} with h, w divisible by 2^levels; prior {2}. Unclamped.
  Tensor forward(const Tensor& rgb, const Tensor& prior) const;
  Tensor forward(const Tensor& rgb, const NoisePrior& prior) const;

  // Inference path: clamps the output to [0, 1].
  ColorImage denoise(const ColorImage& image, const NoisePrior& prior) const;

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const CondformerConfig& config() const { return cfg_; }
  std::vector<TransformerBlock>& latent_stack() { return latent_; }

 private:
  CondformerConfig cfg_;
  ParamSet params_;
  std::vector<TransformerBlock> encoder_, latent_, decoder_;
  Tensor embed_w_, embed_b_, out_w_, out_b_;
  std::vector<Tensor> down_w_, fuse_w_;
};

// ---- training -------------------------------------------------------------------

struct DenoiserTrainConfig {
  long steps = 2000;
  int batch = 2;
  double lr_max = 4e-4;
  double lr_min = 1e-6;
  double weight_decay = 1e-4;
  int patch = 32;
  double sigma_s_max = 0.3;
  double sigma_r_max = 50.0 / 255.0;
  bool clip_noise = true;   // sensor-realistic training data
  bool zero_prior = false;  // feed (0, 0) regardless of the true prior
  uint64_t seed = 0;
};

struct TrainSample {
  Tensor noisy;  // {3,p,p}
  Tensor clean;
  NoisePrior prior;
};

// Deterministic synthetic stream: sample(index) crops a clean patch, draws a
// prior uniformly from [0, sigma_s_max] x [0, sigma_r_max] and synthesizes
// heteroscedastic noise. Pure function of (config, index).
class DenoiseStream {
 public:
  DenoiseStream(std::vector<ColorImage> clean_images, const DenoiserTrainConfig& config);
  TrainSample sample(long index) const;
  size_t image_count() const { return clean_.size(); }

 private:
  std::vector<ColorImage> clean_;
  DenoiserTrainConfig cfg_;
};

// Adam + cosine annealing on mean L1; returns the per-step loss curve.
std::vector<double> train_denoiser(MicroCondformer& model, const DenoiseStream& stream,
                                   const DenoiserTrainConfig& config);

void save_denoiser(const MicroCondformer& model, const std::string& path);
MicroCondformer load_denoiser(const std::string& path);

}  // namespace nprior
