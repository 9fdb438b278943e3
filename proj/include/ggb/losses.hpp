#pragma once

// Training objectives. The three discriminator objectives (global, RAPD,
// NVTD) are the same binary-cross-entropy functional applied to different
// scores, so there is exactly one implementation with three named call
// sites; likewise for the generator-side fooling losses.

#include <map>
#include <vector>

#include "ggb/ops.hpp"

namespace ggb {

inline constexpr double kScoreClampEps = 1e-7;

template <class T>
struct LossWeights {
  T lambda_real = T(0.02);
  std::map<int, T> lambda_rapd;  // per level n
  std::map<int, T> lambda_nvtd;
  std::vector<int> active_levels;

  static LossWeights defaults(const std::vector<int>& levels, T lreal = T(0.02), T lrapd = T(0.01),
                              T lnvtd = T(0.01)) {
    LossWeights w;
    w.lambda_real = lreal;
    w.active_levels = levels;
    for (int n : levels) {
      w.lambda_rapd[n] = lrapd;
      w.lambda_nvtd[n] = lnvtd;
    }
    return w;
  }
};

namespace detail {

// Scores must come out of a sigmoid; an exact 0 or 1 means the head is
// missing or the value overflowed, which the caller should hear about.
template <class T>
Tensor<T> checked_score(const Tensor<T>& s, const char* role) {
  for (long i = 0; i < s.numel(); ++i) {
    const T v = s.data()[i];
    if (!(v > T(0) && v < T(1)))
      throw std::domain_error(std::string("adversarial loss: ") + role + " score " +
                              std::to_string(static_cast<double>(v)) + " outside (0,1)");
  }
  return clamp(s, static_cast<T>(kScoreClampEps), T(1) - static_cast<T>(kScoreClampEps));
}

}  // namespace detail

// -E[log s_real] - E[log(1 - s_fake)]
template <class T>
Tensor<T> adversarial_discriminator_loss(const Tensor<T>& score_real, const Tensor<T>& score_fake) {
  Tensor<T> r = detail::checked_score(score_real, "real");
  Tensor<T> f = detail::checked_score(score_fake, "fake");
  Tensor<T> lr = scale(mean(log_op(r)), T(-1));
  Tensor<T> lf = scale(mean(log_op(one_minus(f))), T(-1));
  return add(lr, lf);
}

// -E[log s_fake]
template <class T>
Tensor<T> adversarial_generator_loss(const Tensor<T>& score_fake) {
  Tensor<T> f = detail::checked_score(score_fake, "fake");
  return scale(mean(log_op(f)), T(-1));
}

template <class T>
Tensor<T> loss_discriminator(const Tensor<T>& score_real, const Tensor<T>& score_fake) {
  return adversarial_discriminator_loss(score_real, score_fake);
}

template <class T>
Tensor<T> loss_realism(const Tensor<T>& score_fake) {
  return adversarial_generator_loss(score_fake);
}

template <class T>
Tensor<T> loss_rapd_discriminator(const Tensor<T>& score_real_feat, const Tensor<T>& score_fake_feat) {
  return adversarial_discriminator_loss(score_real_feat, score_fake_feat);
}

template <class T>
Tensor<T> loss_nvtd_discriminator(const Tensor<T>& score_d_real, const Tensor<T>& score_d_fake) {
  return adversarial_discriminator_loss(score_d_real, score_d_fake);
}

template <class T>
Tensor<T> loss_rapd_generator(const Tensor<T>& score_fake_feat) {
  return adversarial_generator_loss(score_fake_feat);
}

template <class T>
Tensor<T> loss_nvtd_generator(const Tensor<T>& score_d_fake) {
  return adversarial_generator_loss(score_d_fake);
}

// Per-element-mean L1 between the level-n target and the level-n output.
template <class T>
Tensor<T> loss_rec_level(const Tensor<T>& y_level, const Tensor<T>& xhat_level) {
  return l1_distance(xhat_level, y_level);
}

// L_G = lambda_real * l_real + l_rec^N
template <class T>
Tensor<T> loss_generator_total(const Tensor<T>& l_real, const Tensor<T>& l_rec_final,
                               const LossWeights<T>& w) {
  return add(scale(l_real, w.lambda_real), l_rec_final);
}

// One level's generator-side guiding losses. Adversarial parts may be
// absent (ablations); reconstruction is always present.
template <class T>
struct GgbLevelLosses {
  Tensor<T> rapd;  // invalid when the RAPD branch is disabled
  Tensor<T> nvtd;
  Tensor<T> rec;
};

// Weighted sum over the attached levels:
// sum_n lambda_RAPD^n * l_RAPD^n + lambda_NVTD^n * l_NVTD^n + l_rec^n
template <class T>
Tensor<T> loss_ggb_total(const std::map<int, GgbLevelLosses<T>>& per_level, const LossWeights<T>& w) {
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (int n : w.active_levels) {
    auto it = per_level.find(n);
    if (it == per_level.end())
      throw std::invalid_argument("loss_ggb_total: missing losses for active level " +
                                  std::to_string(n));
    const GgbLevelLosses<T>& l = it->second;
    if (l.rapd.valid()) {
      auto lam = w.lambda_rapd.find(n);
      total = add(total, scale(l.rapd, lam == w.lambda_rapd.end() ? T(0) : lam->second));
    }
    if (l.nvtd.valid()) {
      auto lam = w.lambda_nvtd.find(n);
      total = add(total, scale(l.nvtd, lam == w.lambda_nvtd.end() ? T(0) : lam->second));
    }
    if (l.rec.valid()) total = add(total, l.rec);
  }
  return total;
}

}  // namespace ggb
