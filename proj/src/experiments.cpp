#include "nprior/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "nprior/errors.hpp"
#include "nprior/metrics.hpp"
#include "nprior/rng.hpp"

namespace nprior {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  if (values.empty()) return 0.0;
  const double pos = q * double(values.size() - 1);
  const size_t lo = size_t(pos);
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - double(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size() - 1));
}

nlohmann::json summary_stats(const std::vector<double>& v) {
  return nlohmann::json{{"mean", mean_of(v)},     {"std", std_of(v)},
                        {"q25", quantile(v, 0.25)}, {"median", quantile(v, 0.5)},
                        {"q75", quantile(v, 0.75)}};
}

uint64_t cell_seed(uint64_t base, uint64_t a, uint64_t b) {
  return base ^ (a * 0x9e3779b97f4a7c15ULL + 0x1234567ULL) ^ (b * 0xd1342543de82ef95ULL);
}

NoisePrior estimate_color_prior(const ColorImage& noisy, const LonpeConfig& config) {
  double s = 0.0, r = 0.0;
  for (int c = 0; c < 3; ++c) {
    const PriorEstimate est = estimate(noisy.planes[size_t(c)], config);
    s += est.prior.sigma_s;
    r += est.prior.sigma_r;
  }
  return NoisePrior{s / 3.0, r / 3.0};
}

ColorImage crop_color(const ColorImage& img, int x0, int y0, int size) {
  ColorImage out(size, size);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.planes[size_t(c)].at(x, y) = img.planes[size_t(c)].at(x0 + x, y0 + y);
  return out;
}

}  // namespace

nlohmann::json ExperimentReport::to_json() const {
  return nlohmann::json{{"name", name},
                        {"config", config},
                        {"records", records},
                        {"aggregates", aggregates},
                        {"wall_seconds", wall_seconds}};
}

std::string ExperimentReport::to_csv() const {
  if (records.empty()) return "";
  std::set<std::string> keys;
  for (const auto& r : records)
    for (auto it = r.begin(); it != r.end(); ++it) keys.insert(it.key());
  std::string csv;
  bool first = true;
  for (const auto& k : keys) {
    if (!first) csv += ",";
    csv += k;
    first = false;
  }
  csv += "\n";
  for (const auto& r : records) {
    first = true;
    for (const auto& k : keys) {
      if (!first) csv += ",";
      first = false;
      if (r.contains(k)) {
        const auto& v = r.at(k);
        csv += v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
    csv += "\n";
  }
  return csv;
}

std::vector<NoisePrior> default_sweep_priors() {
  return {{0.05, 0.02}, {0.10, 0.04}, {0.15, 0.08}};
}

ExperimentReport run_estimation_sweep(const std::vector<ImagePlane>& images,
                                      const std::vector<NoisePrior>& priors,
                                      const LonpeConfig& config, uint64_t seed) {
  if (images.empty()) throw DataEmptyError("estimation sweep needs at least one image");
  if (priors.empty()) throw DataEmptyError("estimation sweep needs at least one prior");
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "estimation_sweep";
  report.config = {{"seed", seed},
                   {"images", images.size()},
                   {"synthesis", "unclipped heteroscedastic"},
                   {"patch_size", config.patch_size},
                   {"select_ratio", config.select_ratio},
                   {"use_smoothness_filter", config.use_smoothness_filter}};
  for (size_t p = 0; p < priors.size(); ++p) {
    for (size_t i = 0; i < images.size(); ++i) {
      NoiseSpec spec;
      spec.kind = NoiseKind::kPoissonGaussian;
      spec.prior = priors[p];
      spec.clip = false;  // estimation protocol: clipping would bias the tails
      spec.seed = cell_seed(seed, p, i);
      const ImagePlane noisy = sample_noise(images[i], spec);
      const PriorEstimate est = estimate(noisy, config);
      report.records.push_back({{"prior_index", p},
                                {"image_index", i},
                                {"sigma_s_true", priors[p].sigma_s},
                                {"sigma_r_true", priors[p].sigma_r},
                                {"sigma_s_est", est.prior.sigma_s},
                                {"sigma_r_est", est.prior.sigma_r},
                                {"abs_err_s", std::fabs(est.prior.sigma_s - priors[p].sigma_s)},
                                {"abs_err_r", std::fabs(est.prior.sigma_r - priors[p].sigma_r)},
                                {"patches_used", est.patches_used},
                                {"clamped", clamp_flag_name(est.clamped)}});
    }
  }
  nlohmann::json per_prior = nlohmann::json::array();
  for (size_t p = 0; p < priors.size(); ++p) {
    std::vector<double> est_s, est_r, err_s, err_r;
    for (const auto& r : report.records) {
      if (r.at("prior_index").get<size_t>() != p) continue;
      est_s.push_back(r.at("sigma_s_est").get<double>());
      est_r.push_back(r.at("sigma_r_est").get<double>());
      err_s.push_back(r.at("abs_err_s").get<double>());
      err_r.push_back(r.at("abs_err_r").get<double>());
    }
    per_prior.push_back({{"sigma_s_true", priors[p].sigma_s},
                         {"sigma_r_true", priors[p].sigma_r},
                         {"sigma_s", summary_stats(est_s)},
                         {"sigma_r", summary_stats(est_r)},
                         {"mean_abs_err_s", mean_of(err_s)},
                         {"mean_abs_err_r", mean_of(err_r)}});
  }
  report.aggregates = {{"per_prior", per_prior}};
  report.wall_seconds = elapsed_seconds(start);
  return report;
}

std::vector<LonpeArm> default_lonpe_arms() {
  return {{"8x8/5%/off", 8, 0.05, false},   {"8x8/5%/on", 8, 0.05, true},
          {"8x8/10%/on", 8, 0.10, true},    {"16x16/10%/on", 16, 0.10, true},
          {"16x16/20%/on", 16, 0.20, true}, {"32x32/10%/on", 32, 0.10, true}};
}

ExperimentReport run_ablation_lonpe(const std::vector<ImagePlane>& images,
                                    const std::vector<LonpeArm>& arms, const NoisePrior& truth,
                                    uint64_t seed) {
  if (images.empty()) throw DataEmptyError("ablation needs at least one image");
  const auto start = Clock::now();
  ExperimentReport report;
  report.name = "ablation_lonpe";
  report.config = {{"seed", seed},
                   {"images", images.size()},
                   {"sigma_s_true", truth.sigma_s},
                   {"sigma_r_true", truth.sigma_r},
                   {"synthesis", "unclipped heteroscedastic"}};

  // One noise realization per image, shared by all arms.
  std::vector<ImagePlane> noisy;
  noisy.reserve(images.size());
  for (size_t i = 0; i < images.size(); ++i) {
    NoiseSpec spec;
    spec.kind = NoiseKind::kPoissonGaussian;
    spec.prior = truth;
    spec.clip = false;
    spec.seed = cell_seed(seed, 0xab1a7e, i);
    noisy.push_back(sample_noise(images[i], spec));
  }

  nlohmann::json per_arm = nlohmann::json::object();
  for (const auto& arm : arms) {
    LonpeConfig config;
    config.patch_size = arm.patch_size;
    config.select_ratio = arm.select_ratio;
    config.use_smoothness_filter = arm.use_smoothness_filter;
    config.seed = seed;
    std::vector<NoisePrior> estimates;
    for (size_t i = 0; i < noisy.size(); ++i) {
      const PriorEstimate est = estimate(noisy[i], config);
      estimates.push_back(est.prior);
      report.records.push_back({{"arm", arm.label},
                                {"image_index", i},
                                {"sigma_s_est", est.prior.sigma_s},
                                {"sigma_r_est", est.prior.sigma_r},
                                {"patches_used", est.patches_used}});
    }
    const auto [mape_s, mape_r] = mape(estimates, truth);
    per_arm[arm.label] = {{"mape_sigma_s", mape_s}, {"mape_sigma_r", mape_r}};
  }

  report.aggregates = {{"per_arm", per_arm},
                       {"paper_reference",
                        {{"16x16/10%/on", {0.029, 0.021}},
                         {"8x8/5%/on", {0.052, 0.037}},
                         {"8x8/5%/off", {0.094, 0.056}},
                         {"16x16/20%/on", {0.029, 0.022}},
                         {"32x32/10%/on", {0.063, 0.033}}}}};
  // Qualitative-ordering checks mirrored from the reference table.
  if (per_arm.contains("8x8/5%/on") && per_arm.contains("8x8/5%/off")) {
    report.aggregates["smooth_filter_helps"] =
        per_arm["8x8/5%/on"]["mape_sigma_s"].get<double>() <
        per_arm["8x8/5%/off"]["mape_sigma_s"].get<double>();
  }
  if (per_arm.contains("16x16/10%/on")) {
    const double best = per_arm["16x16/10%/on"]["mape_sigma_s"].get<double>();
    bool is_best = true;
    for (const char* other : {"8x8/5%/on", "16x16/20%/on", "32x32/10%/on"}) {
      if (per_arm.contains(other))
        is_best = is_best && best <= per_arm[other]["mape_sigma_s"].get<double>();
    }
    report.aggregates["arm_16x16_10_is_best"] = is_best;
  }
  report.wall_seconds = elapsed_seconds(start);
  return report;
}

double evaluate_denoiser(const MicroCondformer& model, const std::vector<ColorImage>& clean_images,
                         const ConditionalAblationConfig& config, uint64_t seed,
                         const std::string& prior_mode) {
  if (clean_images.empty()) throw DataEmptyError("evaluation needs clean images");
  const int axis = std::max(1, int(std::lround(std::sqrt(double(config.eval_cells)))));
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < axis; ++i) {
    for (int j = 0; j < axis; ++j) {
      const NoisePrior prior{config.train.sigma_s_max * (2.0 * i + 1.0) / (2.0 * axis),
                             config.train.sigma_r_max * (2.0 * j + 1.0) / (2.0 * axis)};
      for (int e = 0; e < config.eval_images_per_cell; ++e) {
        const auto& scene = clean_images[size_t(i * axis + j) * size_t(config.eval_images_per_cell) +
                                         size_t(e)] ;
        const ColorImage clean = crop_color(scene, 0, 0, config.eval_patch);
        NoiseSpec spec;
        spec.kind = NoiseKind::kPoissonGaussian;
        spec.prior = prior;
        spec.clip = true;  // sensor-realistic evaluation inputs
        spec.seed = cell_seed(seed, uint64_t(i * axis + j), uint64_t(e) + 0xe7a1);
        const ColorImage noisy = sample_noise(clean, spec);
        NoisePrior fed{0.0, 0.0};
        if (prior_mode == "true")
          fed = prior;
        else if (prior_mode == "estimate")
          fed = estimate_color_prior(noisy, LonpeConfig{});
        else if (prior_mode != "zero")
          throw InvalidSpecError("unknown prior mode: " + prior_mode);
        const ColorImage out = model.denoise(noisy, fed);
        total += psnr(out, clean);
        ++count;
      }
    }
  }
  return total / double(count);
}

ExperimentReport run_conditional_ablation(const std::vector<ColorImage>& clean_images,
                                          const ConditionalAblationConfig& config, uint64_t seed) {
  const auto start = Clock::now();
  const int axis = std::max(1, int(std::lround(std::sqrt(double(config.eval_cells)))));
  const size_t eval_needed = size_t(axis) * size_t(axis) * size_t(config.eval_images_per_cell);
  if (clean_images.size() < eval_needed + 1)
    throw DataEmptyError("conditional ablation needs " + std::to_string(eval_needed + 1) +
                         " clean images");

  // Held-out split: training stream sees everything past the eval block.
  const std::vector<ColorImage> eval_set(clean_images.begin(),
                                         clean_images.begin() + long(eval_needed));
  const std::vector<ColorImage> train_set(clean_images.begin() + long(eval_needed),
                                          clean_images.end());

  CondformerConfig cfg_none = config.model;
  cfg_none.conditional = false;
  CondformerConfig cfg_cond = config.model;
  cfg_cond.conditional = true;

  DenoiserTrainConfig train_true = config.train;
  DenoiserTrainConfig train_zero = config.train;
  train_zero.zero_prior = true;

  MicroCondformer model_none(cfg_none, seed);
  MicroCondformer model_zero(cfg_cond, seed);
  MicroCondformer model_true(cfg_cond, seed);
  const DenoiseStream stream(train_set, config.train);

  auto train_arm = [&stream](MicroCondformer& model, const DenoiserTrainConfig& cfg) {
    train_denoiser(model, stream, cfg);
  };
  if (config.threads >= 3) {
    std::thread ta([&] { train_arm(model_none, train_true); });
    std::thread tb([&] { train_arm(model_zero, train_zero); });
    train_arm(model_true, train_true);
    ta.join();
    tb.join();
  } else {
    train_arm(model_none, train_true);
    train_arm(model_zero, train_zero);
    train_arm(model_true, train_true);
  }

  const double psnr_none = evaluate_denoiser(model_none, eval_set, config, seed, "zero");
  const double psnr_zero = evaluate_denoiser(model_zero, eval_set, config, seed, "zero");
  const double psnr_true = evaluate_denoiser(model_true, eval_set, config, seed, "true");

  if (!config.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config.checkpoint_dir);
    save_denoiser(model_none, config.checkpoint_dir + "/no_condsa.ckpt");
    save_denoiser(model_zero, config.checkpoint_dir + "/zero_prior.ckpt");
    save_denoiser(model_true, config.checkpoint_dir + "/true_prior.ckpt");
  }

  ExperimentReport report;
  report.name = "conditional_ablation";
  report.config = {{"seed", seed},
                   {"steps", config.train.steps},
                   {"batch", config.train.batch},
                   {"patch", config.train.patch},
                   {"sigma_s_max", config.train.sigma_s_max},
                   {"sigma_r_max", config.train.sigma_r_max},
                   {"synthesis", "clipped heteroscedastic"},
                   {"model", to_json(config.model)}};
  report.records.push_back({{"arm", "no_condsa"}, {"psnr_db", psnr_none}});
  report.records.push_back({{"arm", "zero_prior"}, {"psnr_db", psnr_zero}});
  report.records.push_back({{"arm", "true_prior"}, {"psnr_db", psnr_true}});
  report.aggregates = {{"psnr_no_condsa", psnr_none},
                       {"psnr_zero_prior", psnr_zero},
                       {"psnr_true_prior", psnr_true},
                       {"gap_true_vs_zero", psnr_true - psnr_zero},
                       {"gap_true_vs_none", psnr_true - psnr_none},
                       {"abs_gap_zero_vs_none", std::fabs(psnr_zero - psnr_none)},
                       {"paper_reference",
                        {{"no_condsa_db", 39.68}, {"zero_prior_db", 39.68},
                         {"true_prior_lfm_db", 39.90}}}};
  report.wall_seconds = elapsed_seconds(start);
  return report;
}

void write_report_files(const ExperimentReport& report, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/" + report.name + ".json");
    if (!out) throw IoError("cannot write report JSON in " + out_dir);
    out << report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream out(out_dir + "/" + report.name + ".csv");
    if (!out) throw IoError("cannot write report CSV in " + out_dir);
    out << report.to_csv();
  }
}

}  // namespace nprior
