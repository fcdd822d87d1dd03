#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mgrgcl/error.hpp"
#include "mgrgcl/mgr.hpp"
#include "mgrgcl/numerics.hpp"

namespace mgrgcl {

struct SamplerConfig {
  int P = 8;  // identities (or pseudo groups) per batch
  int K = 4;  // instances per identity

  void validate() const {
    if (P < 2) fail(Errc::InvalidConfig, "sampler.P must be >= 2");
    if (K < 2) fail(Errc::InvalidConfig, "sampler.K must be >= 2");
  }
};

struct OptimConfig {
  double lr0 = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int warmup_epochs = 10;
  std::vector<int> decay_epochs{40, 70};
  double decay_factor = 0.1;

  void validate(const std::string& prefix) const {
    if (!(lr0 > 0.0)) fail(Errc::InvalidConfig, prefix + ".lr0 must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail(Errc::InvalidConfig, prefix + ".momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) fail(Errc::InvalidConfig, prefix + ".weight_decay must be >= 0");
    if (warmup_epochs < 0) fail(Errc::InvalidConfig, prefix + ".warmup_epochs must be >= 0");
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) fail(Errc::InvalidConfig, prefix + ".decay_factor must lie in (0,1)");
    for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] <= decay_epochs[i - 1]) fail(Errc::InvalidConfig, prefix + ".decay_epochs must be strictly increasing");
    }
  }
};

/// Draws P distinct labels uniformly, then K indices of each (without
/// replacement when the label has at least K instances). Label-major order.
inline std::vector<std::size_t> pk_sample(std::span<const int> labels, const SamplerConfig& cfg, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  if (by_label.size() < static_cast<std::size_t>(cfg.P)) {
    fail(Errc::NotEnoughIdentities, "need " + std::to_string(cfg.P) + " identities, have " + std::to_string(by_label.size()));
  }
  std::vector<int> distinct;
  for (const auto& [label, _] : by_label) distinct.push_back(label);
  // Partial Fisher-Yates: the first P slots are a uniform draw without replacement.
  for (int i = 0; i < cfg.P; ++i) {
    const std::size_t j = i + rng.uniform_index(distinct.size() - i);
    std::swap(distinct[i], distinct[j]);
  }
  std::vector<std::size_t> batch;
  batch.reserve(static_cast<std::size_t>(cfg.P) * cfg.K);
  for (int i = 0; i < cfg.P; ++i) {
    std::vector<std::size_t> pool = by_label[distinct[i]];
    if (pool.size() >= static_cast<std::size_t>(cfg.K)) {
      for (int k = 0; k < cfg.K; ++k) {
        const std::size_t j = k + rng.uniform_index(pool.size() - k);
        std::swap(pool[k], pool[j]);
        batch.push_back(pool[k]);
      }
    } else {
      for (int k = 0; k < cfg.K; ++k) batch.push_back(pool[rng.uniform_index(pool.size())]);
    }
  }
  return batch;
}

/// Linear warm-up from lr0/10 to lr0 over warmup_epochs, then step decay.
inline double lr_at(int epoch, const OptimConfig& cfg) {
  if (epoch < 0) fail(Errc::InvalidConfig, "epoch must be >= 0");
  if (epoch < cfg.warmup_epochs) {
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.warmup_epochs);
    return cfg.lr0 * (0.1 + 0.9 * t);
  }
  const auto passed = std::count_if(cfg.decay_epochs.begin(), cfg.decay_epochs.end(), [epoch](int e) { return e <= epoch; });
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(passed));
}

/// v <- momentum v + g + wd p ; p <- p - lr v
inline void sgd_update(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr, const OptimConfig& cfg) {
  if (param.size() != grad.size() || param.size() != velocity.size()) fail(Errc::ShapeMismatch, "sgd tensors differ in size");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = cfg.momentum * velocity[i] + grad[i] + cfg.weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

/// Momentum buffers keyed by tensor name.
struct SgdState {
  std::map<std::string, std::vector<double>> velocity;
};

inline void sgd_step(MGRParams& params, const MGRParams& grads, SgdState& state, double lr, const OptimConfig& cfg,
                     bool freeze_classifiers = false) {
  if (params.signature() != grads.signature()) fail(Errc::ShapeMismatch, "gradient shapes differ from parameters");
  std::map<std::string, std::vector<double>*> grad_tensors;
  const_cast<MGRParams&>(grads).for_each_tensor([&grad_tensors](const std::string& name, std::vector<double>& t) { grad_tensors[name] = &t; });
  params.for_each_tensor([&](const std::string& name, std::vector<double>& p) {
    if (freeze_classifiers && name.starts_with("classifier.")) return;
    auto& v = state.velocity[name];
    if (v.size() != p.size()) v.assign(p.size(), 0.0);
    sgd_update(p, *grad_tensors.at(name), v, lr, cfg);
  });
}

}  // namespace mgrgcl
