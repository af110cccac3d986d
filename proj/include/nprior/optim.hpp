#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nprior/tensor.hpp"

namespace nprior {

// Named learnable tensor. Names are unique within a ParamSet.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

class ParamSet {
 public:
  // Initializes with N(0, init_std^2) entries drawn from a stream keyed to
  // (seed, name), so identical names get identical initial values across
  // models. init_std == 0 gives zeros.
  Parameter& add(const std::string& name, Shape shape, double init_std, uint64_t seed);
  Parameter& add_constant(const std::string& name, Shape shape, double fill);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  size_t size() const { return params_.size(); }

  void zero_grads();
  void set_requires_grad(bool v);
  long total_scalars() const;

 private:
  std::vector<Parameter> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to trainable params only
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config) : config_(config) {}

  // Bias-corrected moment update over every trainable parameter with a
  // gradient buffer; lr_override < 0 keeps the configured rate.
  void step(ParamSet& params, double lr_override = -1.0);

  long steps_taken() const { return step_; }
  AdamConfig& config() { return config_; }

 private:
  AdamConfig config_;
  std::vector<AdamState> states_;
  long step_ = 0;
};

// Single-tensor update used by the optimizer and handy in tests.
void adam_step(Tensor& param, const std::vector<double>& grad, AdamState& state, long step,
               const AdamConfig& config);

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_lr(long step, long total_steps, double lr_max, double lr_min);

}  // namespace nprior
