#pragma once

// Independent oracles: central finite differences for gradients, a direct
// quadruple-loop convolution, and a per-window SSIM reference. These never
// call into the differentiable op implementations they are used to check.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ggb/rng.hpp"
#include "ggb/tensor.hpp"

namespace ggb {

struct GradCheckResult {
  double max_rel_err = 0.0;
  long checked = 0;
  long skipped_kinks = 0;  // coordinates where central FD is provably invalid
  bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Checks d(f)/d(inputs) against central differences. `f` must rebuild the
// whole computation from the given leaves and return a scalar. Gradients
// come from a fresh tape per call, so `f` is evaluated 2*numel + 1 times.
//
// `scaled` switches the denominator from per-coordinate magnitudes to the
// infinity norm of the gradient tensor: errors are then measured relative
// to the gradient's scale. Primitive checks use the strict form; composite
// losses through deep leaky-relu stacks need the scaled form because a
// central difference that straddles an activation kink is meaningless for
// coordinates whose true gradient is orders of magnitude below the rest.
inline GradCheckResult gradcheck(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
    const std::vector<Tensor<double>>& inputs, double h, bool scaled = false) {
  GradCheckResult res;

  GradTape<double> tape;
  GradMap<double> grads;
  {
    GradTape<double>::Scope scope(tape);
    Tensor<double> loss = f(inputs);
    grads = tape.backward(loss);
  }

  for (std::size_t which = 0; which < inputs.size(); ++which) {
    const Tensor<double>& leaf = inputs[which];
    if (!leaf.requires_grad()) continue;
    Tensor<double> analytic = grads.grad_or_zero(leaf);
    double scale = 1e-8;
    if (scaled)
      for (long i = 0; i < analytic.numel(); ++i) scale = std::max(scale, std::fabs(analytic.data()[i]));
    for (long i = 0; i < leaf.numel(); ++i) {
      auto evaluate = [&](double delta) {
        std::vector<Tensor<double>> probe = inputs;
        std::vector<double> data = leaf.vec();
        data[static_cast<std::size_t>(i)] += delta;
        probe[which] = Tensor<double>::from_data(leaf.shape(), std::move(data));
        return f(probe).value();
      };
      const double fp = evaluate(h), fm = evaluate(-h);
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic.data()[i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), scale, 1e-8});
      const double rel = std::fabs(fd - an) / denom;
      if (rel >= res.max_rel_err && rel > 1e-6) {
        // Before recording a worse error, rule out a kink under the probe:
        // if the two one-sided slopes disagree, the function is not
        // differentiable within h of this point and central FD proves
        // nothing (piecewise-linear activations make this a measure-zero
        // but real event). A wrong-but-smooth gradient keeps consistent
        // one-sided slopes and still fails.
        const double f0 = evaluate(0.0);
        const double sp = (fp - f0) / h, sm = (f0 - fm) / h;
        const double slope_gap = std::fabs(sp - sm) / std::max({std::fabs(sp), std::fabs(sm), scale, 1e-8});
        if (slope_gap > 1e-3) {
          res.skipped_kinks += 1;
          continue;
        }
      }
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.checked += 1;
    }
  }
  return res;
}

// Random test tensor with values kept away from activation kinks.
inline Tensor<double> random_leaf(Shape shape, SplitMix64& rng, double scale = 1.0,
                                  double keep_away_from_zero = 0.0) {
  std::vector<double> data(static_cast<std::size_t>(numel_of(shape)));
  for (auto& v : data) {
    v = rng.normal() * scale;
    if (keep_away_from_zero > 0.0 && std::fabs(v) < keep_away_from_zero)
      v = v < 0 ? v - keep_away_from_zero : v + keep_away_from_zero;
  }
  return Tensor<double>::from_data(std::move(shape), std::move(data), true);
}

// Re-draws network parameters at a healthy scale for finite-difference
// checks. The production init (std 0.02, zero biases) leaves deep
// pre-activations within the h of a central difference, where FD estimates
// through leaky-relu kinks say nothing; checks want O(0.1) activations.
template <class ParamPtr>
void reinit_for_gradcheck(const std::vector<ParamPtr>& params, SplitMix64& rng) {
  for (auto* p : params) {
    std::vector<double> data(static_cast<std::size_t>(p->value.numel()));
    const bool is_bias = p->value.ndim() == 1;
    for (auto& v : data) v = is_bias ? rng.uniform(-0.2, 0.2) : rng.normal() * 0.25;
    p->value = Tensor<double>::from_data(p->value.shape(), std::move(data), true);
  }
}

namespace reference {

// Direct quadruple-loop convolution over (oc, oy, ox, ic*ky*kx); written
// independently of ops.hpp.
inline std::vector<double> conv2d(const std::vector<double>& x, int B, int IC, int IH, int IW,
                                  const std::vector<double>& w, int OC, int KH, int KW,
                                  const std::vector<double>& bias, int stride, int padding, int& OH,
                                  int& OW) {
  OH = (IH + 2 * padding - KH) / stride + 1;
  OW = (IW + 2 * padding - KW) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(B) * OC * OH * OW, 0.0);
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oc)];
          for (int ic = 0; ic < IC; ++ic)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                int iy = oy * stride + ky - padding;
                int ix = ox * stride + kx - padding;
                if (iy < 0 || iy >= IH || ix < 0 || ix >= IW) continue;
                acc += x[((static_cast<std::size_t>(b) * IC + ic) * IH + iy) * IW + ix] *
                       w[((static_cast<std::size_t>(oc) * IC + ic) * KH + ky) * KW + kx];
              }
          out[((static_cast<std::size_t>(b) * OC + oc) * OH + oy) * OW + ox] = acc;
        }
  return out;
}

// Scatter-form transposed convolution: every input pixel stamps the kernel.
inline std::vector<double> deconv2d(const std::vector<double>& x, int B, int IC, int IH, int IW,
                                    const std::vector<double>& w, int OC, int KH, int KW,
                                    const std::vector<double>& bias, int stride, int padding, int& OH,
                                    int& OW) {
  OH = (IH - 1) * stride - 2 * padding + KH;
  OW = (IW - 1) * stride - 2 * padding + KW;
  std::vector<double> out(static_cast<std::size_t>(B) * OC * OH * OW, 0.0);
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox)
          out[((static_cast<std::size_t>(b) * OC + oc) * OH + oy) * OW + ox] =
              bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oc)];
  for (int b = 0; b < B; ++b)
    for (int ic = 0; ic < IC; ++ic)
      for (int iy = 0; iy < IH; ++iy)
        for (int ix = 0; ix < IW; ++ix) {
          const double xv = x[((static_cast<std::size_t>(b) * IC + ic) * IH + iy) * IW + ix];
          for (int oc = 0; oc < OC; ++oc)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                int oy = iy * stride + ky - padding;
                int ox = ix * stride + kx - padding;
                if (oy < 0 || oy >= OH || ox < 0 || ox >= OW) continue;
                out[((static_cast<std::size_t>(b) * OC + oc) * OH + oy) * OW + ox] +=
                    xv * w[((static_cast<std::size_t>(ic) * OC + oc) * KH + ky) * KW + kx];
              }
        }
  return out;
}

// Per-window SSIM computed from scratch with an explicit double loop over
// window positions; channel-major input of size C*H*W in [0, L].
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, int C, int H, int W,
                   int window, double gaussian_sigma, double k1, double k2, double L) {
  std::vector<double> g(static_cast<std::size_t>(window) * window);
  const double half = (window - 1) / 2.0;
  double wsum = 0.0;
  for (int y = 0; y < window; ++y)
    for (int x = 0; x < window; ++x) {
      double d2 = (y - half) * (y - half) + (x - half) * (x - half);
      g[static_cast<std::size_t>(y) * window + x] = std::exp(-d2 / (2.0 * gaussian_sigma * gaussian_sigma));
      wsum += g[static_cast<std::size_t>(y) * window + x];
    }
  for (auto& v : g) v /= wsum;

  const double c1 = (k1 * L) * (k1 * L);
  const double c2 = (k2 * L) * (k2 * L);
  double total = 0.0;
  long windows = 0;
  for (int c = 0; c < C; ++c) {
    const double* pa = a.data() + static_cast<std::size_t>(c) * H * W;
    const double* pb = b.data() + static_cast<std::size_t>(c) * H * W;
    for (int oy = 0; oy + window <= H; ++oy)
      for (int ox = 0; ox + window <= W; ++ox) {
        double ma = 0, mb = 0;
        for (int y = 0; y < window; ++y)
          for (int x = 0; x < window; ++x) {
            double wv = g[static_cast<std::size_t>(y) * window + x];
            ma += wv * pa[(oy + y) * W + ox + x];
            mb += wv * pb[(oy + y) * W + ox + x];
          }
        double va = 0, vb = 0, cov = 0;
        for (int y = 0; y < window; ++y)
          for (int x = 0; x < window; ++x) {
            double wv = g[static_cast<std::size_t>(y) * window + x];
            double da = pa[(oy + y) * W + ox + x] - ma;
            double db = pb[(oy + y) * W + ox + x] - mb;
            va += wv * da * da;
            vb += wv * db * db;
            cov += wv * da * db;
          }
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        windows += 1;
      }
  }
  return total / static_cast<double>(windows);
}

}  // namespace reference
}  // namespace ggb
