#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vist/errors.hpp"
#include "vist/model.hpp"

namespace vist {

struct TrainConfig {
  double lr = 0.001;
  double weight_decay = 1e-5;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 83;
  std::size_t max_steps = 0;  // 0: bounded by epochs only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  double grad_clip = 0.0;            // max global norm; 0 disables clipping
  double target_loss = 0.0;          // stop once an epoch's training loss is below this

  void validate() const {
    if (!(lr > 0.0)) throw UsageError("lr must be positive");
    if (batch_size == 0) throw UsageError("batch_size must be at least 1");
    if (weight_decay < 0.0) throw UsageError("weight_decay must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw UsageError("adam betas must lie in [0,1)");
    }
  }
};

template <typename T>
struct OptimizerState {
  struct Moments {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Moments> moments;
  std::size_t step = 0;
};

/// One Adam update with decoupled weight decay:
///   θ ← θ·(1 − lr·λ) − lr·m̂/(√v̂ + ε)
template <typename T>
void adam_step(const NamedTensors<T>& params, OptimizerState<T>& state, const TrainConfig& cfg) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) throw NumericError("adam_step: parameter '" + name + "' has no gradient");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);
  const T decay = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  for (auto [name, tensor] : params) {
    auto& mom = state.moments[name];
    if (mom.m.size() != tensor.size()) {
      mom.m.assign(tensor.size(), T{0});
      mom.v.assign(tensor.size(), T{0});
    }
    auto theta = tensor.mutable_data();
    auto grad = tensor.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T g = grad[i];
      mom.m[i] = b1 * mom.m[i] + (T{1} - b1) * g;
      mom.v[i] = b2 * mom.v[i] + (T{1} - b2) * g * g;
      const T m_hat = mom.m[i] / correction1;
      const T v_hat = mom.v[i] / correction2;
      theta[i] = theta[i] * decay - lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const NamedTensors<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params)
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto [name, t] : params)
      for (auto& g : t.mutable_grad()) g *= factor;
  }
  return norm;
}

}  // namespace vist
