// Command-line entry point: noise synthesis, prior estimation, denoiser and
// prior-net training, denoising, evaluation, and the scripted experiments.
//
// Exit codes: 0 ok, 2 usage, 3 data/I-O, 4 numeric.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nprior/checkpoint.hpp"
#include "nprior/condsa.hpp"
#include "nprior/errors.hpp"
#include "nprior/experiments.hpp"
#include "nprior/image.hpp"
#include "nprior/lonpe.hpp"
#include "nprior/metrics.hpp"
#include "nprior/noise.hpp"
#include "nprior/prior_net.hpp"
#include "nprior/rng.hpp"
#include "nprior/scenes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_color_path(const std::string& path) { return has_suffix(path, ".ppm"); }

nprior::ImagePlane load_any_plane(const std::string& path, int bit_depth) {
  return nprior::load_plane(path, bit_depth);
}

void save_same_kind(const nprior::ImagePlane& plane, const std::string& path) {
  if (has_suffix(path, ".pgm")) {
    nprior::save_plane(plane, path,
                       plane.bit_depth > 8 ? nprior::SaveFormat::kGray16
                                           : nprior::SaveFormat::kGray8);
  } else {
    nprior::save_plane(plane, path, nprior::SaveFormat::kFloat32);
  }
}

std::pair<double, double> parse_prior_pair(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos)
    throw CLI::ValidationError("--prior", "expected sigma_s,sigma_r");
  return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
}

// RGGB-style 2x2 subsampling; phase rotates the starting corner.
std::vector<nprior::ImagePlane> bayer_split4(const nprior::ImagePlane& mosaic, int phase) {
  const int ox = phase % 2, oy = (phase / 2) % 2;
  std::vector<nprior::ImagePlane> planes;
  for (int sub = 0; sub < 4; ++sub) {
    const int sx = (sub % 2 + ox) % 2;
    const int sy = (sub / 2 + oy) % 2;
    const int w = (mosaic.width - sx + 1) / 2;
    const int h = (mosaic.height - sy + 1) / 2;
    nprior::ImagePlane p(w, h, 0.0, mosaic.bit_depth);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) p.at(x, y) = mosaic.at(sx + 2 * x, sy + 2 * y);
    planes.push_back(std::move(p));
  }
  return planes;
}

std::vector<nprior::ColorImage> load_color_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && has_suffix(entry.path().string(), ".ppm"))
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  std::vector<nprior::ColorImage> images;
  for (const auto& f : files) images.push_back(nprior::load_color(f));
  if (images.empty()) throw nprior::DataEmptyError("no .ppm images in " + dir);
  return images;
}

json prior_json(const nprior::NoisePrior& p) {
  return json{{"sigma_s", p.sigma_s}, {"sigma_r", p.sigma_r}};
}

struct SynthOptions {
  std::string input, output, kind = "poisson_gaussian";
  double sigma_s = 0.0, sigma_r = 0.0, sigma_r_255 = -1.0;
  std::string prior_pair;
  bool clip = false, random_prior = false;
  uint64_t seed = 0;
  int bit_depth = 0;
};

int run_synth(const SynthOptions& opt) {
  nprior::NoiseSpec spec;
  spec.kind = nprior::noise_kind_from_name(opt.kind);
  spec.prior = {opt.sigma_s, opt.sigma_r};
  if (!opt.prior_pair.empty()) {
    auto [s, r] = parse_prior_pair(opt.prior_pair);
    spec.prior = {s, r};
  }
  if (opt.sigma_r_255 >= 0.0) spec.prior.sigma_r = opt.sigma_r_255 / 255.0;
  if (opt.random_prior) {
    // The reference synthetic ranges: sigma_s in [0, 0.3], sigma_r in [0, 50/255].
    nprior::Rng rng(opt.seed, 0x5e3dULL);
    spec.prior = {0.3 * rng.next_unit(), (50.0 / 255.0) * rng.next_unit()};
  }
  spec.clip = opt.clip;
  spec.seed = opt.seed;

  json sidecar{{"spec", nprior::to_json(spec)}, {"prior", prior_json(spec.prior)}};
  if (is_color_path(opt.input)) {
    const auto clean = nprior::load_color(opt.input, opt.bit_depth);
    const auto noisy = nprior::sample_noise(clean, spec);
    nprior::save_color(noisy, opt.output);
  } else {
    const auto clean = load_any_plane(opt.input, opt.bit_depth);
    const auto noisy = nprior::sample_noise(clean, spec);
    save_same_kind(noisy, opt.output);
  }
  std::ofstream side(opt.output + ".json");
  side << sidecar.dump(2) << "\n";
  std::cout << sidecar.dump() << std::endl;
  std::cerr << "wrote " << opt.output << " (sigma_s=" << spec.prior.sigma_s
            << ", sigma_r=" << spec.prior.sigma_r << ")\n";
  return kOk;
}

struct EstimateOptions {
  std::string input, bayer = "none";
  nprior::LonpeConfig config;
  int phase = 0, bit_depth = 0;
};

int run_estimate(const EstimateOptions& opt) {
  json out;
  if (is_color_path(opt.input)) {
    const auto img = nprior::load_color(opt.input, opt.bit_depth);
    json channels = json::array();
    double s = 0.0, r = 0.0;
    for (int c = 0; c < 3; ++c) {
      const auto est = nprior::estimate(img.planes[size_t(c)], opt.config);
      channels.push_back(nprior::to_json(est));
      s += est.prior.sigma_s;
      r += est.prior.sigma_r;
    }
    out = json{{"channels", channels},
               {"mean", {{"sigma_s", s / 3.0}, {"sigma_r", r / 3.0}}}};
  } else {
    const auto plane = load_any_plane(opt.input, opt.bit_depth);
    if (opt.bayer == "split4") {
      const auto subplanes = bayer_split4(plane, opt.phase);
      json planes = json::array();
      double s = 0.0, r = 0.0;
      for (const auto& p : subplanes) {
        const auto est = nprior::estimate(p, opt.config);
        planes.push_back(nprior::to_json(est));
        s += est.prior.sigma_s;
        r += est.prior.sigma_r;
      }
      out = json{{"planes", planes},
                 {"mean", {{"sigma_s", s / 4.0}, {"sigma_r", r / 4.0}}}};
    } else {
      out = nprior::to_json(nprior::estimate(plane, opt.config));
    }
  }
  std::cout << out.dump(2) << std::endl;
  return kOk;
}

struct TrainDenoiserOptions {
  std::string out, images_dir, loss_out, arm = "true";
  nprior::CondformerConfig model;
  nprior::DenoiserTrainConfig train;
  int procedural = 12;
  int scene_size = 96;
};

int run_train_denoiser(const TrainDenoiserOptions& opt) {
  std::vector<nprior::ColorImage> clean =
      opt.images_dir.empty()
          ? nprior::make_color_suite(size_t(opt.procedural), opt.scene_size, opt.scene_size,
                                     opt.train.seed + 1)
          : load_color_dir(opt.images_dir);
  nprior::CondformerConfig model_cfg = opt.model;
  nprior::DenoiserTrainConfig train_cfg = opt.train;
  if (opt.arm == "none")
    model_cfg.conditional = false;
  else if (opt.arm == "zero")
    train_cfg.zero_prior = true;
  else if (opt.arm != "true")
    throw CLI::ValidationError("--arm", "expected true|zero|none");

  nprior::MicroCondformer model(model_cfg, train_cfg.seed);
  const nprior::DenoiseStream stream(std::move(clean), train_cfg);
  const auto curve = nprior::train_denoiser(model, stream, train_cfg);
  nprior::save_denoiser(model, opt.out);
  if (!opt.loss_out.empty()) {
    std::ofstream out(opt.loss_out);
    out << json{{"loss", curve}}.dump(2) << "\n";
  }
  json summary{{"checkpoint", opt.out},
               {"steps", curve.size()},
               {"final_loss", curve.empty() ? 0.0 : curve.back()},
               {"parameters", model.params().total_scalars()}};
  std::cout << summary.dump() << std::endl;
  std::cerr << "trained " << opt.arm << " arm for " << curve.size() << " steps\n";
  return kOk;
}

struct TrainPriorNetOptions {
  std::string out, images_dir, loss_out;
  nprior::PriorNetTrainConfig train;
  int procedural = 60;
  int scene_size = 64;
};

int run_train_prior_net(const TrainPriorNetOptions& opt) {
  std::vector<nprior::LabeledImage> dataset;
  if (opt.images_dir.empty()) {
    nprior::Rng rng(opt.train.seed, 0xda7aULL);
    for (int i = 0; i < opt.procedural; ++i) {
      const auto clean = nprior::make_test_color(opt.train.seed + 100 + uint64_t(i),
                                                 opt.scene_size, opt.scene_size);
      nprior::NoiseSpec spec;
      spec.kind = nprior::NoiseKind::kPoissonGaussian;
      spec.prior = {0.3 * rng.next_unit(), (50.0 / 255.0) * rng.next_unit()};
      spec.clip = true;
      spec.seed = rng.next_u64();
      dataset.push_back({nprior::sample_noise(clean, spec), spec.prior});
    }
  } else {
    for (const auto& entry : fs::directory_iterator(opt.images_dir)) {
      const std::string path = entry.path().string();
      if (!has_suffix(path, ".ppm")) continue;
      std::ifstream side(path + ".json");
      if (!side) throw nprior::IoError("missing prior sidecar for " + path);
      json meta;
      side >> meta;
      const auto& p = meta.at("prior");
      dataset.push_back({nprior::load_color(path),
                         {p.at("sigma_s").get<double>(), p.at("sigma_r").get<double>()}});
    }
  }
  nprior::PriorNet net(nprior::PriorNetConfig{}, opt.train.seed);
  const auto curve = nprior::train_prior_net(net, dataset, opt.train);
  nprior::save_prior_net(net, opt.out);
  if (!opt.loss_out.empty()) {
    std::ofstream out(opt.loss_out);
    out << json{{"loss", curve}}.dump(2) << "\n";
  }
  std::cout << json{{"checkpoint", opt.out},
                    {"steps", curve.size()},
                    {"final_loss", curve.empty() ? 0.0 : curve.back()}}
                   .dump()
            << std::endl;
  return kOk;
}

struct DenoiseOptions {
  std::string input, output, checkpoint, prior_pair, prior_net_ckpt;
  bool prior_from_estimate = false;
  uint64_t seed = 0;
};

int run_denoise(const DenoiseOptions& opt) {
  const auto noisy = nprior::load_color(opt.input);
  const auto model = nprior::load_denoiser(opt.checkpoint);
  nprior::NoisePrior prior{0.0, 0.0};
  std::string source = "zero";
  if (!opt.prior_pair.empty()) {
    auto [s, r] = parse_prior_pair(opt.prior_pair);
    prior = {s, r};
    source = "given";
  } else if (opt.prior_from_estimate) {
    double s = 0.0, r = 0.0;
    for (int c = 0; c < 3; ++c) {
      const auto est = nprior::estimate(noisy.planes[size_t(c)], nprior::LonpeConfig{});
      s += est.prior.sigma_s;
      r += est.prior.sigma_r;
    }
    prior = {s / 3.0, r / 3.0};
    source = "estimate";
  } else if (!opt.prior_net_ckpt.empty()) {
    const auto net = nprior::load_prior_net(opt.prior_net_ckpt);
    prior = net.predict(noisy, opt.seed);
    source = "net";
  }
  const auto out = model.denoise(noisy, prior);
  nprior::save_color(out, opt.output);
  std::cout << json{{"output", opt.output}, {"prior_source", source}, {"prior", prior_json(prior)}}
                   .dump()
            << std::endl;
  return kOk;
}

int run_eval(const std::string& pred, const std::string& ref) {
  double value = 0.0;
  if (is_color_path(pred))
    value = nprior::psnr(nprior::load_color(pred), nprior::load_color(ref));
  else
    value = nprior::psnr(load_any_plane(pred, 0), load_any_plane(ref, 0));
  json out;
  if (std::isinf(value)) {
    out = json{{"psnr_db", "inf"}, {"identical", true}};
  } else {
    out = json{{"psnr_db", value}, {"identical", false}};
  }
  std::cout << out.dump() << std::endl;
  std::cerr << "PSNR: " << (std::isinf(value) ? std::string("inf") : std::to_string(value))
            << " dB\n";
  return kOk;
}

struct AblationOptions {
  std::string protocol = "sweep", out_dir = "reports";
  int images = 20;
  int size = 0;  // 0: per-protocol default
  uint64_t seed = 0;
  int threads = 3;
  nprior::DenoiserTrainConfig train;
  nprior::CondformerConfig model;
};

int run_ablation(const AblationOptions& opt) {
  nprior::ExperimentReport report;
  if (opt.protocol == "sweep") {
    const int size = opt.size > 0 ? opt.size : 256;
    const auto images = nprior::make_plane_suite(size_t(opt.images), size, size, opt.seed + 1);
    report = nprior::run_estimation_sweep(images, nprior::default_sweep_priors(),
                                          nprior::LonpeConfig{}, opt.seed);
  } else if (opt.protocol == "lonpe") {
    const int size = opt.size > 0 ? opt.size : 512;
    const auto images = nprior::make_plane_suite(size_t(opt.images), size, size, opt.seed + 1);
    report = nprior::run_ablation_lonpe(images, nprior::default_lonpe_arms(), {0.2, 0.01},
                                        opt.seed);
  } else if (opt.protocol == "conditional") {
    nprior::ConditionalAblationConfig cfg;
    cfg.model = opt.model;
    cfg.train = opt.train;
    cfg.threads = opt.threads;
    cfg.checkpoint_dir = opt.out_dir;
    const int size = opt.size > 0 ? opt.size : 96;
    const size_t needed = 9 * size_t(cfg.eval_images_per_cell) + size_t(std::max(8, opt.images));
    const auto images = nprior::make_color_suite(needed, std::max(size, cfg.eval_patch),
                                                 std::max(size, cfg.eval_patch), opt.seed + 1);
    report = nprior::run_conditional_ablation(images, cfg, opt.seed);
  } else {
    throw CLI::ValidationError("--protocol", "expected sweep|lonpe|conditional");
  }
  nprior::write_report_files(report, opt.out_dir);
  std::cout << report.to_json().dump(2) << std::endl;
  std::cerr << "report written to " << opt.out_dir << "/" << report.name << ".{json,csv}\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sensor noise synthesis, noise-prior estimation, and conditional denoising"};
  app.require_subcommand(1);

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Synthesize noise with a known prior");
  synth_cmd->add_option("--input", synth.input, "Clean image (.pgm/.ppm/.fmap)")->required();
  synth_cmd->add_option("--output", synth.output, "Noisy output path")->required();
  synth_cmd->add_option("--kind", synth.kind,
                        "gaussian|sv_gaussian|poisson_gaussian|exact_poisson_gaussian");
  synth_cmd->add_option("--sigma-s", synth.sigma_s, "Signal-dependent level in [0,1]");
  synth_cmd->add_option("--sigma-r", synth.sigma_r, "Signal-independent level in [0,1]");
  synth_cmd->add_option("--sigma-r-255", synth.sigma_r_255, "sigma_r on the 8-bit scale");
  synth_cmd->add_option("--prior", synth.prior_pair, "sigma_s,sigma_r pair");
  synth_cmd->add_flag("--clip", synth.clip, "Clamp the noisy output to [0,1]");
  synth_cmd->add_flag("--random-prior", synth.random_prior,
                      "Draw the prior from the synthetic training ranges");
  synth_cmd->add_option("--seed", synth.seed, "RNG seed");
  synth_cmd->add_option("--bit-depth", synth.bit_depth, "Override container bit depth");

  EstimateOptions est;
  auto* est_cmd = app.add_subcommand("estimate", "Estimate the noise prior from one image");
  est_cmd->add_option("--input", est.input, "Noisy image")->required();
  est_cmd->add_option("--patch-size", est.config.patch_size, "Patch edge length O");
  est_cmd->add_option("--ratio", est.config.select_ratio, "Smooth-selection ratio m/n");
  est_cmd->add_flag_callback(
      "--no-smoothness", [&] { est.config.use_smoothness_filter = false; },
      "Random patch subset instead of the smoothness filter");
  est_cmd->add_option("--min-mean", est.config.min_mean, "Near-black patch exclusion");
  est_cmd->add_option("--min-patches", est.config.min_patches, "Minimum selected patches");
  est_cmd->add_option("--seed", est.config.seed, "Seed for the random-subset arm");
  est_cmd->add_option("--bayer", est.bayer, "none|split4");
  est_cmd->add_option("--phase", est.phase, "Bayer phase (0-3)");
  est_cmd->add_option("--bit-depth", est.bit_depth, "Override container bit depth");

  TrainDenoiserOptions td;
  auto* td_cmd = app.add_subcommand("train-denoiser", "Train the micro denoiser");
  td_cmd->set_config("--config");
  td_cmd->add_option("--out", td.out, "Checkpoint path")->required();
  td_cmd->add_option("--steps", td.train.steps, "Optimization steps");
  td_cmd->add_option("--batch", td.train.batch, "Batch size");
  td_cmd->add_option("--lr-max", td.train.lr_max, "Initial learning rate");
  td_cmd->add_option("--lr-min", td.train.lr_min, "Final learning rate");
  td_cmd->add_option("--weight-decay", td.train.weight_decay, "Decoupled weight decay");
  td_cmd->add_option("--patch", td.train.patch, "Training patch size");
  td_cmd->add_option("--sigma-s-max", td.train.sigma_s_max, "Prior range upper bound");
  td_cmd->add_option("--sigma-r-max", td.train.sigma_r_max, "Prior range upper bound");
  td_cmd->add_option("--seed", td.train.seed, "RNG seed");
  td_cmd->add_option("--arm", td.arm, "true|zero|none conditioning arm");
  td_cmd->add_option("--images", td.images_dir, "Directory of clean .ppm images");
  td_cmd->add_option("--procedural", td.procedural, "Procedural scene count");
  td_cmd->add_option("--scene-size", td.scene_size, "Procedural scene extent");
  td_cmd->add_option("--channels", td.model.base_channels, "Base channel width c");
  td_cmd->add_option("--levels", td.model.levels, "Encoder levels");
  td_cmd->add_option("--latent-blocks", td.model.latent_blocks, "Latent block count N");
  td_cmd->add_option("--embed-k", td.model.k, "Prior embedding half-width k");
  td_cmd->add_option("--heads", td.model.heads, "Attention heads");
  td_cmd->add_option("--loss-out", td.loss_out, "Loss curve JSON path");

  TrainPriorNetOptions tp;
  auto* tp_cmd = app.add_subcommand("train-prior-net", "Train the sRGB prior estimator");
  tp_cmd->set_config("--config");
  tp_cmd->add_option("--out", tp.out, "Checkpoint path")->required();
  tp_cmd->add_option("--steps", tp.train.steps, "Optimization steps");
  tp_cmd->add_option("--batch", tp.train.batch, "Batch size");
  tp_cmd->add_option("--lr-max", tp.train.lr_max, "Initial learning rate");
  tp_cmd->add_option("--lr-min", tp.train.lr_min, "Final learning rate");
  tp_cmd->add_option("--seed", tp.train.seed, "RNG seed");
  tp_cmd->add_option("--images", tp.images_dir, "Directory of noisy .ppm + .json sidecars");
  tp_cmd->add_option("--procedural", tp.procedural, "Procedural training image count");
  tp_cmd->add_option("--scene-size", tp.scene_size, "Procedural scene extent");
  tp_cmd->add_option("--loss-out", tp.loss_out, "Loss curve JSON path");

  DenoiseOptions dn;
  auto* dn_cmd = app.add_subcommand("denoise", "Denoise one image with a trained checkpoint");
  dn_cmd->add_option("--input", dn.input, "Noisy .ppm")->required();
  dn_cmd->add_option("--output", dn.output, "Denoised output .ppm")->required();
  dn_cmd->add_option("--checkpoint", dn.checkpoint, "Denoiser checkpoint")->required();
  dn_cmd->add_option("--prior", dn.prior_pair, "sigma_s,sigma_r pair");
  dn_cmd->add_flag("--prior-from-estimate", dn.prior_from_estimate,
                   "Estimate the prior from the noisy input");
  dn_cmd->add_option("--prior-from-net", dn.prior_net_ckpt, "Prior-net checkpoint");
  dn_cmd->add_option("--seed", dn.seed, "Seed for prior-net patch sampling");

  std::string eval_pred, eval_ref;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR between two images");
  eval_cmd->add_option("--pred", eval_pred, "Prediction image")->required();
  eval_cmd->add_option("--ref", eval_ref, "Reference image")->required();

  AblationOptions ab;
  auto* ab_cmd = app.add_subcommand("ablation", "Scripted experiment protocols");
  ab_cmd->set_config("--config");
  ab_cmd->add_option("--protocol", ab.protocol, "sweep|lonpe|conditional")->required();
  ab_cmd->add_option("--out-dir", ab.out_dir, "Report directory");
  ab_cmd->add_option("--images", ab.images, "Image count");
  ab_cmd->add_option("--size", ab.size, "Image extent (protocol default when 0)");
  ab_cmd->add_option("--seed", ab.seed, "RNG seed");
  ab_cmd->add_option("--threads", ab.threads, "Worker threads for training arms");
  ab_cmd->add_option("--steps", ab.train.steps, "Training steps (conditional)");
  ab_cmd->add_option("--batch", ab.train.batch, "Batch size (conditional)");
  ab_cmd->add_option("--channels", ab.model.base_channels, "Base channels (conditional)");
  ab_cmd->add_option("--latent-blocks", ab.model.latent_blocks, "Latent blocks (conditional)");

  try {
    app.parse(argc, argv);
    if (synth_cmd->parsed()) return run_synth(synth);
    if (est_cmd->parsed()) return run_estimate(est);
    if (td_cmd->parsed()) return run_train_denoiser(td);
    if (tp_cmd->parsed()) return run_train_prior_net(tp);
    if (dn_cmd->parsed()) return run_denoise(dn);
    if (eval_cmd->parsed()) return run_eval(eval_pred, eval_ref);
    if (ab_cmd->parsed()) return run_ablation(ab);
    return kUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  } catch (const nprior::RankDeficientError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const nprior::TooFewPatchesError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const nprior::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
