#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "ggb/tensor.hpp"

namespace ggb {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m;  // first moment, same shape as the parameter
  std::vector<T> v;  // second moment
  std::int64_t t = 0;

  void ensure_size(std::size_t n) {
    if (m.size() != n) m.assign(n, T(0));
    if (v.size() != n) v.assign(n, T(0));
  }
};

// Standard bias-corrected Adam. Returns the updated parameter; the state is
// advanced in place. A zero learning rate is a full no-op so disabled
// optimizers leave parameter and state untouched.
template <class T>
Tensor<T> adam_step(const Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
                    const AdamConfig& cfg) {
  if (param.shape() != grad.shape())
    throw ShapeError("adam_step: param " + shape_str(param.shape()) + " vs grad " + shape_str(grad.shape()));
  if (cfg.learning_rate == 0.0) return param;
  const std::size_t n = param.vec().size();
  state.ensure_size(n);
  state.t += 1;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T corr1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.t)));
  const T corr2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.t)));
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad.data()[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] / corr1;
    const T vhat = state.v[i] / corr2;
    out[i] = param.data()[i] - lr * mhat / (std::sqrt(vhat) + eps);
  }
  return Tensor<T>::from_data(param.shape(), std::move(out), param.requires_grad());
}

inline std::uint64_t next_param_version() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

// A trainable tensor slot. `version` is a globally ordered stamp bumped on
// every update, which is what the staged-update tests instrument.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  AdamState<T> adam;
  std::uint64_t version = 0;

  void assign(Tensor<T> updated) {
    value = std::move(updated);
    version = next_param_version();
  }
};

// Applies one Adam step to every parameter that has a gradient in `grads`.
// Parameters without a recorded gradient are left untouched.
template <class T>
void apply_updates(std::vector<Param<T>*>& params, const GradMap<T>& grads, const AdamConfig& cfg) {
  for (Param<T>* p : params) {
    if (!grads.has(p->value)) continue;
    if (cfg.learning_rate == 0.0) continue;
    p->assign(adam_step(p->value, grads.grad(p->value), p->adam, cfg));
  }
}

}  // namespace ggb
