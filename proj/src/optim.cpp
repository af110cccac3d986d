#include "nprior/optim.hpp"

#include <cmath>

#include "nprior/errors.hpp"
#include "nprior/rng.hpp"

namespace nprior {

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace

Parameter& ParamSet::add(const std::string& name, Shape shape, double init_std, uint64_t seed) {
  if (has(name)) throw Error("duplicate parameter name: " + name);
  Tensor t(std::move(shape));
  if (init_std > 0.0) {
    Rng rng(seed, fnv1a(name));
    for (auto& v : t.value()) v = init_std * rng.next_normal();
  }
  params_.push_back(Parameter{name, std::move(t), true});
  return params_.back();
}

Parameter& ParamSet::add_constant(const std::string& name, Shape shape, double fill) {
  if (has(name)) throw Error("duplicate parameter name: " + name);
  params_.push_back(Parameter{name, Tensor(std::move(shape), fill), true});
  return params_.back();
}

Parameter& ParamSet::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter: " + name);
}

const Parameter& ParamSet::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw Error("unknown parameter: " + name);
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return true;
  return false;
}

void ParamSet::zero_grads() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParamSet::set_requires_grad(bool v) {
  for (auto& p : params_) p.tensor.set_requires_grad(v && p.trainable);
}

long ParamSet::total_scalars() const {
  long n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void adam_step(Tensor& param, const std::vector<double>& grad, AdamState& state, long step,
               const AdamConfig& config) {
  const size_t n = param.value().size();
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  const double bc1 = 1.0 - std::pow(config.beta1, double(step));
  const double bc2 = 1.0 - std::pow(config.beta2, double(step));
  auto& val = param.value();
  for (size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    val[i] -= config.lr * (mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * val[i]);
  }
}

void AdamOptimizer::step(ParamSet& params, double lr_override) {
  if (states_.size() != params.size()) states_.resize(params.size());
  ++step_;
  AdamConfig cfg = config_;
  if (lr_override >= 0.0) cfg.lr = lr_override;
  auto& items = params.items();
  for (size_t i = 0; i < items.size(); ++i) {
    if (!items[i].trainable) continue;
    const auto* g = items[i].tensor.grad_if();
    if (!g) continue;
    adam_step(items[i].tensor, *g, states_[i], step_, cfg);
  }
}

double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0) return lr_max;
  const double t = std::min(1.0, double(step) / double(total_steps));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(kPi * t));
}

}  // namespace nprior
