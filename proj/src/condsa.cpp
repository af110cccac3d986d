#include "nprior/condsa.hpp"

#include <algorithm>
#include <cmath>

#include "nprior/checkpoint.hpp"
#include "nprior/errors.hpp"
#include "nprior/rng.hpp"

namespace nprior {

namespace {

double inv_sqrt(int fan_in) { return 1.0 / std::sqrt(double(fan_in)); }

Tensor prior_tensor(const NoisePrior& prior) {
  return Tensor(Shape{2}, std::vector<double>{prior.sigma_s, prior.sigma_r});
}

}  // namespace

Tensor embed_prior(const Tensor& prior, int k, const EmbedFcParams* fc) {
  if (prior.rank() != 1 || prior.dim(0) != 2)
    throw ShapeMismatchError("embed_prior: prior must be a {2} tensor");
  if (k < 1) throw ShapeMismatchError("embed_prior: k must be >= 1");
  // Constant repeat matrix keeps the construction differentiable in the prior.
  Tensor rep(Shape{2 * k, 2});
  for (int i = 0; i < k; ++i) rep.value()[size_t(i) * 2] = 1.0;
  for (int i = k; i < 2 * k; ++i) rep.value()[size_t(i) * 2 + 1] = 1.0;
  Tensor base = reshape(matmul(rep, reshape(prior, Shape{2, 1})), Shape{2 * k});
  if (!fc) return base;
  Tensor hidden = gelu(affine(base, fc->w1, fc->b1));
  return affine(hidden, fc->w2, fc->b2);
}

Tensor embed_prior(const NoisePrior& prior, int k, const EmbedFcParams* fc) {
  return embed_prior(prior_tensor(prior), k, fc);
}

Tensor lfm(const Tensor& t, const Tensor& z, const LfmParams& params) {
  if (t.rank() != 3) throw ShapeMismatchError("lfm: feature must be {c,h,w}");
  if (z.rank() != 1) throw ShapeMismatchError("lfm: embedding must be rank 1");
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  if (params.pointwise.dim(0) != c || params.pointwise.dim(1) != c + z.dim(0))
    throw ShapeMismatchError("lfm: pointwise weights must be {c, c+|z|}");
  Tensor broadcast = tile_spatial(z, h, w);
  Tensor fused = conv1x1(concat(t, broadcast, 0), params.pointwise);
  return depthwise_conv3x3(fused, params.depthwise);
}

Tensor channel_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& alpha,
                         int heads, Tensor* attention_out) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
    throw ShapeMismatchError("channel_attention: q,k,v must be {c,hw}");
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeMismatchError("channel_attention: q,k,v shapes differ");
  if (alpha.numel() != 1) throw ShapeMismatchError("channel_attention: alpha must be scalar");
  const int c = q.dim(0);
  if (heads < 1 || c % heads != 0)
    throw ShapeMismatchError("channel_attention: channels not divisible by heads");
  const int ch = c / heads;
  Tensor inv_alpha = reciprocal(alpha);
  Tensor out, attn_rows;
  for (int g = 0; g < heads; ++g) {
    Tensor qh = heads == 1 ? q : slice_rows(q, g * ch, (g + 1) * ch);
    Tensor kh = heads == 1 ? k : slice_rows(k, g * ch, (g + 1) * ch);
    Tensor vh = heads == 1 ? v : slice_rows(v, g * ch, (g + 1) * ch);
    Tensor logits = mul(matmul(qh, transpose(kh)), inv_alpha);
    Tensor attn = softmax(logits, 1);
    Tensor oh = matmul(attn, vh);
    out = g == 0 ? oh : concat(out, oh, 0);
    if (attention_out) attn_rows = g == 0 ? attn : concat(attn_rows, attn, 0);
  }
  if (attention_out) *attention_out = attn_rows;
  return out;
}

nlohmann::json to_json(const CondformerConfig& cfg) {
  return nlohmann::json{{"base_channels", cfg.base_channels},
                        {"levels", cfg.levels},
                        {"latent_blocks", cfg.latent_blocks},
                        {"k", cfg.k},
                        {"ffn_expansion", cfg.ffn_expansion},
                        {"heads", cfg.heads},
                        {"conditional", cfg.conditional}};
}

CondformerConfig condformer_config_from_json(const nlohmann::json& j) {
  CondformerConfig cfg;
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.levels = j.at("levels").get<int>();
  cfg.latent_blocks = j.at("latent_blocks").get<int>();
  cfg.k = j.at("k").get<int>();
  cfg.ffn_expansion = j.at("ffn_expansion").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.conditional = j.at("conditional").get<bool>();
  return cfg;
}

TransformerBlock::TransformerBlock(ParamSet& params, const std::string& prefix, int channels,
                                   int k, int ffn_expansion, int heads, bool conditional,
                                   uint64_t init_seed)
    : channels_(channels), k_(k), heads_(heads), conditional_(conditional) {
  const int c = channels;
  const int e = ffn_expansion;
  auto w = [&](const std::string& name, Shape shape, double std) -> Tensor {
    return params.add(prefix + "." + name, std::move(shape), std, init_seed).tensor;
  };
  ln1_gamma_ = params.add_constant(prefix + ".ln1.g", Shape{c}, 1.0).tensor;
  ln1_beta_ = w("ln1.b", Shape{c}, 0.0);
  wq_point_ = w("wq.point", Shape{c, c}, inv_sqrt(c));
  wq_depth_ = w("wq.depth", Shape{c, 3, 3}, 1.0 / 3.0);
  wk_point_ = w("wk.point", Shape{c, c}, inv_sqrt(c));
  wk_depth_ = w("wk.depth", Shape{c, 3, 3}, 1.0 / 3.0);
  wv_point_ = w("wv.point", Shape{c, c}, inv_sqrt(c));
  wv_depth_ = w("wv.depth", Shape{c, 3, 3}, 1.0 / 3.0);
  wy_ = w("wy", Shape{c, c}, inv_sqrt(c));
  log_alpha_ = w("log_alpha", Shape{1}, 0.0);  // alpha = exp(0) = 1
  if (conditional_) {
    lfm_q_.pointwise = w("lfm_q.point", Shape{c, c + 2 * k}, inv_sqrt(c + 2 * k));
    lfm_q_.depthwise = w("lfm_q.depth", Shape{c, 3, 3}, 1.0 / 3.0);
    lfm_k_.pointwise = w("lfm_k.point", Shape{c, c + 2 * k}, inv_sqrt(c + 2 * k));
    lfm_k_.depthwise = w("lfm_k.depth", Shape{c, 3, 3}, 1.0 / 3.0);
    embed_fc_.w1 = w("embed.w1", Shape{2 * k, 2 * k}, inv_sqrt(2 * k));
    embed_fc_.b1 = w("embed.b1", Shape{2 * k}, 0.0);
    embed_fc_.w2 = w("embed.w2", Shape{2 * k, 2 * k}, inv_sqrt(2 * k));
    embed_fc_.b2 = w("embed.b2", Shape{2 * k}, 0.0);
  }
  ln2_gamma_ = params.add_constant(prefix + ".ln2.g", Shape{c}, 1.0).tensor;
  ln2_beta_ = w("ln2.b", Shape{c}, 0.0);
  ffn_w1_ = w("ffn.w1", Shape{e * c, c}, inv_sqrt(c));
  ffn_w2_ = w("ffn.w2", Shape{c, e * c}, inv_sqrt(e * c));
}

Tensor TransformerBlock::forward(const Tensor& x) const {
  if (conditional_) throw ShapeMismatchError("conditional block needs a prior");
  return forward(x, Tensor());
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& prior) const {
  if (x.rank() != 3 || x.dim(0) != channels_)
    throw ShapeMismatchError("block expects {" + std::to_string(channels_) + ",h,w} input");
  const int c = channels_, h = x.dim(1), w = x.dim(2);
  Tensor xn = layer_norm_channels(x, ln1_gamma_, ln1_beta_);
  Tensor q = depthwise_conv3x3(conv1x1(xn, wq_point_), wq_depth_);
  Tensor k = depthwise_conv3x3(conv1x1(xn, wk_point_), wk_depth_);
  Tensor v = depthwise_conv3x3(conv1x1(xn, wv_point_), wv_depth_);
  if (conditional_) {
    Tensor z = embed_prior(prior, k_, &embed_fc_);
    q = lfm(q, z, lfm_q_);
    k = lfm(k, z, lfm_k_);
  }
  const int hw = h * w;
  Tensor qm = l2_normalize(reshape(q, Shape{c, hw}), 1);
  Tensor km = l2_normalize(reshape(k, Shape{c, hw}), 1);
  Tensor vm = reshape(v, Shape{c, hw});
  Tensor attn = channel_attention(qm, km, vm, exp(log_alpha_), heads_);
  Tensor y = add(conv1x1(reshape(attn, Shape{c, h, w}), wy_), x);
  Tensor yn = layer_norm_channels(y, ln2_gamma_, ln2_beta_);
  Tensor f = conv1x1(gelu(conv1x1(yn, ffn_w1_)), ffn_w2_);
  return add(y, f);
}

Tensor condsa_block(const Tensor& x, const Tensor& prior, const TransformerBlock& block) {
  if (!block.conditional()) throw ShapeMismatchError("condsa_block needs a conditional block");
  return block.forward(x, prior);
}

Tensor color_to_tensor(const ColorImage& image) {
  const int h = image.height, w = image.width;
  Tensor t(Shape{3, h, w});
  for (int c = 0; c < 3; ++c)
    std::copy(image.planes[size_t(c)].data.begin(), image.planes[size_t(c)].data.end(),
              t.value().begin() + size_t(c) * h * w);
  return t;
}

ColorImage tensor_to_color(const Tensor& t, bool clamp01) {
  if (t.rank() != 3 || t.dim(0) != 3) throw ShapeMismatchError("tensor_to_color: {3,h,w} needed");
  const int h = t.dim(1), w = t.dim(2);
  ColorImage img(w, h);
  for (int c = 0; c < 3; ++c) {
    auto& plane = img.planes[size_t(c)].data;
    const size_t base = size_t(c) * h * w;
    for (size_t i = 0; i < plane.size(); ++i) {
      const double v = t.value()[base + i];
      plane[i] = clamp01 ? std::clamp(v, 0.0, 1.0) : v;
    }
  }
  return img;
}

MicroCondformer::MicroCondformer(CondformerConfig cfg, uint64_t init_seed) : cfg_(cfg) {
  if (cfg.base_channels < 2 || cfg.base_channels % 2 != 0)
    throw NotDivisibleError("base_channels must be even");
  if (cfg.levels < 1 || cfg.latent_blocks < 1 || cfg.k < 1 || cfg.ffn_expansion < 1)
    throw InvalidSpecError("bad condformer config");
  const int c = cfg.base_channels;
  embed_w_ = params_.add("embed.w", Shape{c, 3, 3, 3}, inv_sqrt(27), init_seed).tensor;
  embed_b_ = params_.add("embed.b", Shape{c}, 0.0, init_seed).tensor;
  int ch = c;
  for (int l = 0; l < cfg.levels; ++l) {
    encoder_.emplace_back(params_, "enc" + std::to_string(l), ch, cfg.k, cfg.ffn_expansion,
                          cfg.heads, false, init_seed);
    down_w_.push_back(params_.add("down" + std::to_string(l) + ".w", Shape{2 * ch, 4 * ch},
                                  inv_sqrt(4 * ch), init_seed)
                          .tensor);
    ch *= 2;
  }
  if (ch % cfg.heads != 0) throw NotDivisibleError("latent channels not divisible by heads");
  for (int n = 0; n < cfg.latent_blocks; ++n)
    latent_.emplace_back(params_, "latent" + std::to_string(n), ch, cfg.k, cfg.ffn_expansion,
                         cfg.heads, cfg.conditional, init_seed);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const int skip_ch = c << l;
    const int up_ch = ch / 4;
    fuse_w_.push_back(params_.add("up" + std::to_string(l) + ".fuse.w",
                                  Shape{skip_ch, skip_ch + up_ch}, inv_sqrt(skip_ch + up_ch),
                                  init_seed)
                          .tensor);
    decoder_.emplace_back(params_, "dec" + std::to_string(l), skip_ch, cfg.k, cfg.ffn_expansion,
                          cfg.heads, false, init_seed);
    ch = skip_ch;
  }
  // Small residual head keeps the initial map near identity.
  out_w_ = params_.add("out.w", Shape{3, c, 3, 3}, 0.1 * inv_sqrt(9 * c), init_seed).tensor;
  out_b_ = params_.add("out.b", Shape{3}, 0.0, init_seed).tensor;
}

Tensor MicroCondformer::forward(const Tensor& rgb, const Tensor& prior) const {
  if (rgb.rank() != 3 || rgb.dim(0) != 3)
    throw ShapeMismatchError("micro_condformer expects a {3,h,w} input");
  const int h = rgb.dim(1), w = rgb.dim(2);
  const int factor = 1 << cfg_.levels;
  if (h % factor != 0 || w % factor != 0)
    throw NotDivisibleError("spatial extents must be divisible by 2^levels");
  Tensor x = conv3x3(rgb, embed_w_, embed_b_);
  std::vector<Tensor> skips;
  skips.reserve(size_t(cfg_.levels));
  for (int l = 0; l < cfg_.levels; ++l) {
    x = encoder_[size_t(l)].forward(x);
    skips.push_back(x);
    x = conv1x1(space_to_depth(x), down_w_[size_t(l)]);
  }
  for (const auto& block : latent_)
    x = cfg_.conditional ? block.forward(x, prior) : block.forward(x);
  for (int i = 0; i < cfg_.levels; ++i) {
    const int l = cfg_.levels - 1 - i;
    x = depth_to_space(x);
    x = conv1x1(concat(skips[size_t(l)], x, 0), fuse_w_[size_t(i)]);
    x = decoder_[size_t(i)].forward(x);
  }
  Tensor residual = conv3x3(x, out_w_, out_b_);
  return add(rgb, residual);
}

Tensor MicroCondformer::forward(const Tensor& rgb, const NoisePrior& prior) const {
  return forward(rgb, prior_tensor(prior));
}

ColorImage MicroCondformer::denoise(const ColorImage& image, const NoisePrior& prior) const {
  Tensor out = forward(color_to_tensor(image), prior);
  return tensor_to_color(out, true);
}

DenoiseStream::DenoiseStream(std::vector<ColorImage> clean_images,
                             const DenoiserTrainConfig& config)
    : clean_(std::move(clean_images)), cfg_(config) {
  if (clean_.empty()) throw DataEmptyError("denoise stream needs at least one clean image");
  for (const auto& img : clean_)
    if (img.width < cfg_.patch || img.height < cfg_.patch)
      throw ImageTooSmallError("clean image smaller than the training patch");
}

TrainSample DenoiseStream::sample(long index) const {
  Rng rng(cfg_.seed, 0x7a11c0deULL + uint64_t(index));
  const auto& img = clean_[size_t(rng.next_below(clean_.size()))];
  const int x0 = int(rng.next_below(uint64_t(img.width - cfg_.patch + 1)));
  const int y0 = int(rng.next_below(uint64_t(img.height - cfg_.patch + 1)));
  NoisePrior prior{cfg_.sigma_s_max * rng.next_unit(), cfg_.sigma_r_max * rng.next_unit()};

  ColorImage clean(cfg_.patch, cfg_.patch);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < cfg_.patch; ++y)
      for (int x = 0; x < cfg_.patch; ++x)
        clean.planes[size_t(c)].at(x, y) = img.planes[size_t(c)].at(x0 + x, y0 + y);

  NoiseSpec spec;
  spec.kind = NoiseKind::kPoissonGaussian;
  spec.prior = prior;
  spec.clip = cfg_.clip_noise;
  spec.seed = rng.next_u64();
  ColorImage noisy = sample_noise(clean, spec);
  return TrainSample{color_to_tensor(noisy), color_to_tensor(clean), prior};
}

std::vector<double> train_denoiser(MicroCondformer& model, const DenoiseStream& stream,
                                   const DenoiserTrainConfig& config) {
  auto& params = model.params();
  params.set_requires_grad(true);
  AdamConfig adam;
  adam.lr = config.lr_max;
  adam.weight_decay = config.weight_decay;
  AdamOptimizer opt(adam);
  const int batch = std::max(1, config.batch);
  std::vector<double> curve;
  curve.reserve(size_t(std::max<long>(0, config.steps)));
  for (long t = 0; t < config.steps; ++t) {
    const double lr = cosine_lr(t, config.steps, config.lr_max, config.lr_min);
    params.zero_grads();
    double step_loss = 0.0;
    for (int j = 0; j < batch; ++j) {
      const TrainSample s = stream.sample(t * batch + j);
      Tape tape;
      Tensor prior = config.zero_prior
                         ? Tensor(Shape{2}, std::vector<double>{0.0, 0.0})
                         : Tensor(Shape{2}, std::vector<double>{s.prior.sigma_s, s.prior.sigma_r});
      Tensor pred = model.forward(s.noisy, prior);
      Tensor loss = scale(l1_loss(pred, s.clean), 1.0 / batch);
      tape.backward(loss);
      step_loss += loss.item();
    }
    opt.step(params, lr);
    curve.push_back(step_loss);
  }
  params.set_requires_grad(false);
  return curve;
}

void save_denoiser(const MicroCondformer& model, const std::string& path) {
  save_checkpoint(model.params(), path,
                  nlohmann::json{{"model", "micro_condformer"}, {"config", to_json(model.config())}});
}

MicroCondformer load_denoiser(const std::string& path) {
  const nlohmann::json manifest = read_checkpoint_meta(path);
  if (!manifest.contains("meta") || !manifest["meta"].contains("config"))
    throw UnsupportedFormatError("checkpoint manifest lacks a model config: " + path);
  MicroCondformer model(condformer_config_from_json(manifest["meta"]["config"]), 0);
  load_checkpoint(model.params(), path);
  return model;
}

}  // namespace nprior
