#pragma once

// Differentiable primitive operations. Every op validates shapes, computes
// its forward value, and (when a tape is active and an input is on the
// graph) records a pullback that accumulates into the inputs' gradient
// buffers. No op ever writes to an input tensor.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ggb/tensor.hpp"

namespace ggb {

namespace hooks {
// Fault-injection switch for the verification suite: flips the sign of
// conv2d's input gradient so the gradient oracle can prove it would catch
// a broken pullback. Never set outside tests/verify.
inline std::atomic<bool> conv_backward_sign_flip{false};
}  // namespace hooks

namespace detail {

// Valid kernel-tap range for one output coordinate: taps k with
// 0 <= o*stride + k - padding < extent.
struct TapRange {
  int lo, hi;  // half-open
};

inline TapRange tap_range(int out_pos, int stride, int padding, int kernel, int extent) {
  const int base = out_pos * stride - padding;
  int lo = base < 0 ? -base : 0;
  int hi = kernel;
  if (base + hi > extent) hi = extent - base;
  if (hi < lo) hi = lo;
  return {lo, hi};
}

template <class T>
bool track(const Tensor<T>& a) {
  return GradTape<T>::active() && a.on_graph();
}

template <class T>
bool track(const Tensor<T>& a, const Tensor<T>& b) {
  return GradTape<T>::active() && (a.on_graph() || b.on_graph());
}

template <class T>
bool track(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& c) {
  return GradTape<T>::active() && (a.on_graph() || b.on_graph() || c.on_graph());
}

template <class T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return;
  throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

template <class T>
void require_4d(const char* op, const Tensor<T>& t, const char* role) {
  if (t.ndim() != 4)
    throw ShapeError(std::string(op) + ": " + role + " must be 4-D (B,C,H,W), got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
  bool tr = detail::track(a, b);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, b, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = sink.buffer(b))
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
  bool tr = detail::track(a, b);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, b, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = sink.buffer(b))
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  bool tr = detail::track(a, b);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, b, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
      if (T* gb = sink.buffer(b))
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
    });
  }
  return y;
}

// y = m*a + c, elementwise with scalars m, c.
template <class T>
Tensor<T> affine(const Tensor<T>& a, T m, T c) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = m * a.data()[i] + c;
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, m, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += m * g[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T m) {
  return affine(a, m, T(0));
}

template <class T>
Tensor<T> one_minus(const Tensor<T>& a) {
  return affine(a, T(-1), T(1));
}

template <class T>
Tensor<T> log_op(const Tensor<T>& a) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(a.data()[i] > T(0)))
      throw std::domain_error("log: non-positive input " + std::to_string(static_cast<double>(a.data()[i])));
    out[i] = std::log(a.data()[i]);
  }
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / a.data()[i];
    });
  }
  return y;
}

// Gradient passes only strictly inside the interval.
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::min(hi, std::max(lo, a.data()[i]));
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, lo, hi, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i)
          if (a.data()[i] > lo && a.data()[i] < hi) ga[i] += g[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// activations

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i)
          if (a.data()[i] > T(0)) ga[i] += g[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : slope * a.data()[i];
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, slope, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += (a.data()[i] > T(0) ? T(1) : slope) * g[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> tanh_act(const Tensor<T>& a) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a.data()[i]);
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, y, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += (T(1) - y.data()[i] * y.data()[i]) * g[i];
    });
  }
  return y;
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  const std::size_t n = a.vec().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T v = a.data()[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(a.shape(), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, y, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += y.data()[i] * (T(1) - y.data()[i]) * g[i];
    });
  }
  return y;
}

enum class Activation { LeakyRelu, Relu, Tanh, Sigmoid };

inline Activation parse_activation(const std::string& name) {
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

template <class T>
Tensor<T> elementwise(Activation act, const Tensor<T>& a, T slope = T(0.2)) {
  switch (act) {
    case Activation::LeakyRelu: return leaky_relu(a, slope);
    case Activation::Relu: return relu(a);
    case Activation::Tanh: return tanh_act(a);
    case Activation::Sigmoid: return sigmoid(a);
  }
  throw std::invalid_argument("unknown activation enum value");
}

template <class T>
Tensor<T> elementwise(const std::string& name, const Tensor<T>& a, T slope = T(0.2)) {
  return elementwise(parse_activation(name), a, slope);
}

// ---------------------------------------------------------------------------
// reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  const std::size_t n = a.vec().size();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make({1}, {acc}, false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
    });
  }
  return y;
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  const std::size_t n = a.vec().size();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a.data()[i];
  acc /= static_cast<T>(n);
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make({1}, {acc}, false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, n](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a)) {
        const T s = g[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) ga[i] += s;
      }
    });
  }
  return y;
}

// Per-element mean of |a - b|. The mean convention keeps loss weights
// comparable across pyramid levels.
template <class T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("l1_distance", a, b);
  const std::size_t n = a.vec().size();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  acc /= static_cast<T>(n);
  bool tr = detail::track(a, b);
  Tensor<T> y = Tensor<T>::make({1}, {acc}, false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, b, n](const std::vector<T>& g, GradSink<T>& sink) {
      const T s = g[0] / static_cast<T>(n);
      T* ga = sink.buffer(a);
      T* gb = sink.buffer(b);
      for (std::size_t i = 0; i < n; ++i) {
        T d = a.data()[i] - b.data()[i];
        T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
        if (ga) ga[i] += s * sgn;
        if (gb) gb[i] -= s * sgn;
      }
    });
  }
  return y;
}

enum class Reduction { Mean, Sum, L1Distance };

inline Reduction parse_reduction(const std::string& name) {
  if (name == "mean") return Reduction::Mean;
  if (name == "sum") return Reduction::Sum;
  if (name == "l1_distance") return Reduction::L1Distance;
  throw std::invalid_argument("unknown reduction: " + name);
}

template <class T>
Tensor<T> reduce(Reduction kind, const Tensor<T>& a, std::optional<Tensor<T>> b = std::nullopt) {
  switch (kind) {
    case Reduction::Mean: return mean(a);
    case Reduction::Sum: return sum(a);
    case Reduction::L1Distance:
      if (!b) throw std::invalid_argument("l1_distance needs two operands");
      return l1_distance(a, *b);
  }
  throw std::invalid_argument("unknown reduction enum value");
}

// ---------------------------------------------------------------------------
// spatial ops

// Average-pools non-overlapping factor x factor blocks. Accepts (B,C,H,W)
// or a bare (H,W) matrix.
template <class T>
Tensor<T> downsample(const Tensor<T>& a, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample: factor must be >= 1");
  const bool matrix = a.ndim() == 2;
  if (!matrix) detail::require_4d("downsample", a, "input");
  const int B = matrix ? 1 : a.dim(0);
  const int C = matrix ? 1 : a.dim(1);
  const int H = matrix ? a.dim(0) : a.dim(2);
  const int W = matrix ? a.dim(1) : a.dim(3);
  if (H % factor != 0 || W % factor != 0)
    throw ShapeError("downsample: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by factor " + std::to_string(factor));
  const int OH = H / factor, OW = W / factor;
  std::vector<T> out(static_cast<std::size_t>(B) * C * OH * OW);
  const T inv = T(1) / static_cast<T>(factor * factor);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = a.data() + (static_cast<std::size_t>(b) * C + c) * H * W;
      T* dst = out.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          T acc = T(0);
          for (int ky = 0; ky < factor; ++ky)
            for (int kx = 0; kx < factor; ++kx) acc += src[(oy * factor + ky) * W + ox * factor + kx];
          dst[oy * OW + ox] = acc * inv;
        }
    }
  Shape oshape = matrix ? Shape{OH, OW} : Shape{B, C, OH, OW};
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(std::move(oshape), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, B, C, H, W, OH, OW, factor, inv](const std::vector<T>& g,
                                                                               GradSink<T>& sink) {
      T* ga = sink.buffer(a);
      if (!ga) return;
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T* gsrc = g.data() + (static_cast<std::size_t>(b) * C + c) * OH * OW;
          T* gdst = ga + (static_cast<std::size_t>(b) * C + c) * H * W;
          for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
              const T v = gsrc[oy * OW + ox] * inv;
              for (int ky = 0; ky < factor; ++ky)
                for (int kx = 0; kx < factor; ++kx) gdst[(oy * factor + ky) * W + ox * factor + kx] += v;
            }
        }
    });
  }
  return y;
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_4d("concat_channels", a, "first input");
  detail::require_4d("concat_channels", b, "second input");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: non-channel dims differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const int B = a.dim(0), CA = a.dim(1), CB = b.dim(1), H = a.dim(2), W = a.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(B) * (CA + CB) * plane);
  for (int bi = 0; bi < B; ++bi) {
    std::copy_n(a.data() + bi * CA * plane, CA * plane, out.data() + static_cast<std::size_t>(bi) * (CA + CB) * plane);
    std::copy_n(b.data() + bi * CB * plane, CB * plane,
                out.data() + static_cast<std::size_t>(bi) * (CA + CB) * plane + CA * plane);
  }
  bool tr = detail::track(a, b);
  Tensor<T> y = Tensor<T>::make({B, CA + CB, H, W}, std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, b, B, CA, CB, plane](const std::vector<T>& g, GradSink<T>& sink) {
      T* ga = sink.buffer(a);
      T* gb = sink.buffer(b);
      for (int bi = 0; bi < B; ++bi) {
        const T* gs = g.data() + static_cast<std::size_t>(bi) * (CA + CB) * plane;
        if (ga)
          for (std::size_t i = 0; i < CA * plane; ++i) ga[bi * CA * plane + i] += gs[i];
        if (gb)
          for (std::size_t i = 0; i < CB * plane; ++i) gb[bi * CB * plane + i] += gs[CA * plane + i];
      }
    });
  }
  return y;
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
  detail::require_4d("global_avg_pool", a, "input");
  const int B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> out(static_cast<std::size_t>(B) * C);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* src = a.data() + (static_cast<std::size_t>(b) * C + c) * plane;
      T acc = T(0);
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      out[static_cast<std::size_t>(b) * C + c] = acc / static_cast<T>(plane);
    }
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make({B, C, 1, 1}, std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a, B, C, plane](const std::vector<T>& g, GradSink<T>& sink) {
      T* ga = sink.buffer(a);
      if (!ga) return;
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          const T v = g[static_cast<std::size_t>(b) * C + c] / static_cast<T>(plane);
          T* dst = ga + (static_cast<std::size_t>(b) * C + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
        }
    });
  }
  return y;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw ShapeError("reshape: element count mismatch, " + shape_str(a.shape()) + " -> " + shape_str(shape));
  std::vector<T> out(a.vec());
  bool tr = detail::track(a);
  Tensor<T> y = Tensor<T>::make(std::move(shape), std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(y.id(), [a](const std::vector<T>& g, GradSink<T>& sink) {
      if (T* ga = sink.buffer(a))
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// convolution / transposed convolution

// input (B,IC,IH,IW), kernel (OC,IC,KH,KW), bias (OC). Output spatial size
// floor((H + 2p - k)/s) + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                 int padding) {
  detail::require_4d("conv2d", input, "input");
  detail::require_4d("conv2d", kernel, "kernel");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const int B = input.dim(0), IC = input.dim(1), IH = input.dim(2), IW = input.dim(3);
  const int OC = kernel.dim(0), KIC = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (KIC != IC)
    throw ShapeError("conv2d: kernel in-channels " + std::to_string(KIC) + " != input channels " +
                     std::to_string(IC));
  if (bias.numel() != OC)
    throw ShapeError("conv2d: bias length " + std::to_string(bias.numel()) + " != out-channels " +
                     std::to_string(OC));
  const int OH = (IH + 2 * padding - KH) / stride + 1;
  const int OW = (IW + 2 * padding - KW) / stride + 1;
  if (IH + 2 * padding < KH || IW + 2 * padding < KW)
    throw ShapeError("conv2d: kernel " + std::to_string(KH) + "x" + std::to_string(KW) +
                     " larger than padded input " + std::to_string(IH + 2 * padding) + "x" +
                     std::to_string(IW + 2 * padding));

  std::vector<T> out(static_cast<std::size_t>(B) * OC * OH * OW);
  const T* x = input.data();
  const T* w = kernel.data();
  const T* bb = bias.data();
  std::vector<detail::TapRange> yr(static_cast<std::size_t>(OH)), xr(static_cast<std::size_t>(OW));
  for (int oy = 0; oy < OH; ++oy) yr[static_cast<std::size_t>(oy)] = detail::tap_range(oy, stride, padding, KH, IH);
  for (int ox = 0; ox < OW; ++ox) xr[static_cast<std::size_t>(ox)] = detail::tap_range(ox, stride, padding, KW, IW);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc) {
      T* dst = out.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
      for (int oy = 0; oy < OH; ++oy) {
        const auto [ky0, ky1] = yr[static_cast<std::size_t>(oy)];
        const int iy_base = oy * stride - padding;
        for (int ox = 0; ox < OW; ++ox) {
          const auto [kx0, kx1] = xr[static_cast<std::size_t>(ox)];
          const int ix_base = ox * stride - padding;
          T acc = bb[oc];
          for (int ic = 0; ic < IC; ++ic) {
            const T* xp = x + (static_cast<std::size_t>(b) * IC + ic) * IH * IW;
            const T* wp = w + ((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW;
            for (int ky = ky0; ky < ky1; ++ky) {
              const T* xrow = xp + (iy_base + ky) * IW + ix_base;
              const T* wrow = wp + ky * KW;
              T row = T(0);
              for (int kx = kx0; kx < kx1; ++kx) row += xrow[kx] * wrow[kx];
              acc += row;
            }
          }
          dst[oy * OW + ox] = acc;
        }
      }
    }

  bool tr = detail::track(input, kernel, bias);
  Tensor<T> y = Tensor<T>::make({B, OC, OH, OW}, std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(
        y.id(), [input, kernel, bias, stride, padding, B, IC, IH, IW, OC, KH, KW, OH, OW](
                    const std::vector<T>& g, GradSink<T>& sink) {
          const T* x = input.data();
          const T* w = kernel.data();
          std::vector<detail::TapRange> yr(static_cast<std::size_t>(OH)), xr(static_cast<std::size_t>(OW));
          for (int oy = 0; oy < OH; ++oy)
            yr[static_cast<std::size_t>(oy)] = detail::tap_range(oy, stride, padding, KH, IH);
          for (int ox = 0; ox < OW; ++ox)
            xr[static_cast<std::size_t>(ox)] = detail::tap_range(ox, stride, padding, KW, IW);
          if (T* gx = sink.buffer(input)) {
            const T flip = hooks::conv_backward_sign_flip.load() ? T(-1) : T(1);
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b)
              for (int oc = 0; oc < OC; ++oc) {
                const T* gs = g.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                  const auto [ky0, ky1] = yr[static_cast<std::size_t>(oy)];
                  const int iy_base = oy * stride - padding;
                  for (int ox = 0; ox < OW; ++ox) {
                    const auto [kx0, kx1] = xr[static_cast<std::size_t>(ox)];
                    const int ix_base = ox * stride - padding;
                    const T gv = flip * gs[oy * OW + ox];
                    for (int ic = 0; ic < IC; ++ic) {
                      T* gxp = gx + (static_cast<std::size_t>(b) * IC + ic) * IH * IW;
                      const T* wp = w + ((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW;
                      for (int ky = ky0; ky < ky1; ++ky) {
                        T* grow = gxp + (iy_base + ky) * IW + ix_base;
                        const T* wrow = wp + ky * KW;
                        for (int kx = kx0; kx < kx1; ++kx) grow[kx] += gv * wrow[kx];
                      }
                    }
                  }
                }
              }
          }
          if (T* gw = sink.buffer(kernel)) {
#pragma omp parallel for schedule(static)
            for (int oc = 0; oc < OC; ++oc)
              for (int b = 0; b < B; ++b) {
                const T* gs = g.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                for (int oy = 0; oy < OH; ++oy) {
                  const auto [ky0, ky1] = yr[static_cast<std::size_t>(oy)];
                  const int iy_base = oy * stride - padding;
                  for (int ox = 0; ox < OW; ++ox) {
                    const auto [kx0, kx1] = xr[static_cast<std::size_t>(ox)];
                    const int ix_base = ox * stride - padding;
                    const T gv = gs[oy * OW + ox];
                    for (int ic = 0; ic < IC; ++ic) {
                      const T* xp = x + (static_cast<std::size_t>(b) * IC + ic) * IH * IW;
                      T* gwp = gw + ((static_cast<std::size_t>(oc) * IC + ic) * KH) * KW;
                      for (int ky = ky0; ky < ky1; ++ky) {
                        const T* xrow = xp + (iy_base + ky) * IW + ix_base;
                        T* wrow = gwp + ky * KW;
                        for (int kx = kx0; kx < kx1; ++kx) wrow[kx] += gv * xrow[kx];
                      }
                    }
                  }
                }
              }
          }
          if (T* gb = sink.buffer(bias)) {
            for (int b = 0; b < B; ++b)
              for (int oc = 0; oc < OC; ++oc) {
                const T* gs = g.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                T acc = T(0);
                for (int i = 0; i < OH * OW; ++i) acc += gs[i];
                gb[oc] += acc;
              }
          }
        });
  }
  return y;
}

// Transposed convolution, the gradient-transpose of conv2d with the same
// geometry. input (B,IC,IH,IW), kernel (IC,OC,KH,KW), bias (OC). Output
// spatial size (H-1)*s - 2p + k.
template <class T>
Tensor<T> deconv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride,
                   int padding) {
  detail::require_4d("deconv2d", input, "input");
  detail::require_4d("deconv2d", kernel, "kernel");
  if (stride < 1) throw std::invalid_argument("deconv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("deconv2d: padding must be >= 0");
  const int B = input.dim(0), IC = input.dim(1), IH = input.dim(2), IW = input.dim(3);
  const int KIC = kernel.dim(0), OC = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
  if (KIC != IC)
    throw ShapeError("deconv2d: kernel in-channels " + std::to_string(KIC) + " != input channels " +
                     std::to_string(IC));
  if (bias.numel() != OC)
    throw ShapeError("deconv2d: bias length " + std::to_string(bias.numel()) + " != out-channels " +
                     std::to_string(OC));
  const int OH = (IH - 1) * stride - 2 * padding + KH;
  const int OW = (IW - 1) * stride - 2 * padding + KW;
  if (OH < 1 || OW < 1)
    throw ShapeError("deconv2d: output size " + std::to_string(OH) + "x" + std::to_string(OW) +
                     " is not positive");

  // Scatter form: every input pixel stamps the kernel onto its footprint.
  // Parallel over (b, oc): each thread owns one output plane.
  std::vector<T> out(static_cast<std::size_t>(B) * OC * OH * OW);
  const T* x = input.data();
  const T* w = kernel.data();
  const T* bb = bias.data();
  std::vector<detail::TapRange> yr(static_cast<std::size_t>(IH)), xr(static_cast<std::size_t>(IW));
  for (int iy = 0; iy < IH; ++iy) yr[static_cast<std::size_t>(iy)] = detail::tap_range(iy, stride, padding, KH, OH);
  for (int ix = 0; ix < IW; ++ix) xr[static_cast<std::size_t>(ix)] = detail::tap_range(ix, stride, padding, KW, OW);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < B; ++b)
    for (int oc = 0; oc < OC; ++oc) {
      T* dst = out.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
      for (int i = 0; i < OH * OW; ++i) dst[i] = bb[oc];
      for (int ic = 0; ic < IC; ++ic) {
        const T* xp = x + (static_cast<std::size_t>(b) * IC + ic) * IH * IW;
        const T* wp = w + ((static_cast<std::size_t>(ic) * OC + oc) * KH) * KW;
        for (int iy = 0; iy < IH; ++iy) {
          const auto [ky0, ky1] = yr[static_cast<std::size_t>(iy)];
          const int oy_base = iy * stride - padding;
          for (int ix = 0; ix < IW; ++ix) {
            const T xv = xp[iy * IW + ix];
            if (xv == T(0)) continue;
            const auto [kx0, kx1] = xr[static_cast<std::size_t>(ix)];
            const int ox_base = ix * stride - padding;
            for (int ky = ky0; ky < ky1; ++ky) {
              T* drow = dst + (oy_base + ky) * OW + ox_base;
              const T* wrow = wp + ky * KW;
              for (int kx = kx0; kx < kx1; ++kx) drow[kx] += xv * wrow[kx];
            }
          }
        }
      }
    }

  bool tr = detail::track(input, kernel, bias);
  Tensor<T> y = Tensor<T>::make({B, OC, OH, OW}, std::move(out), false, tr);
  if (tr) {
    GradTape<T>::active()->record(
        y.id(), [input, kernel, bias, stride, padding, B, IC, IH, IW, OC, KH, KW, OH, OW](
                    const std::vector<T>& g, GradSink<T>& sink) {
          const T* x = input.data();
          const T* w = kernel.data();
          std::vector<detail::TapRange> yr(static_cast<std::size_t>(IH)), xr(static_cast<std::size_t>(IW));
          for (int iy = 0; iy < IH; ++iy)
            yr[static_cast<std::size_t>(iy)] = detail::tap_range(iy, stride, padding, KH, OH);
          for (int ix = 0; ix < IW; ++ix)
            xr[static_cast<std::size_t>(ix)] = detail::tap_range(ix, stride, padding, KW, OW);
          if (T* gx = sink.buffer(input)) {
            // d out / d in is a plain convolution gather.
#pragma omp parallel for schedule(static)
            for (int b = 0; b < B; ++b)
              for (int ic = 0; ic < IC; ++ic) {
                T* gxp = gx + (static_cast<std::size_t>(b) * IC + ic) * IH * IW;
                for (int iy = 0; iy < IH; ++iy) {
                  const auto [ky0, ky1] = yr[static_cast<std::size_t>(iy)];
                  const int oy_base = iy * stride - padding;
                  for (int ix = 0; ix < IW; ++ix) {
                    const auto [kx0, kx1] = xr[static_cast<std::size_t>(ix)];
                    const int ox_base = ix * stride - padding;
                    T acc = T(0);
                    for (int oc = 0; oc < OC; ++oc) {
                      const T* gs = g.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                      const T* wp = w + ((static_cast<std::size_t>(ic) * OC + oc) * KH) * KW;
                      for (int ky = ky0; ky < ky1; ++ky) {
                        const T* grow = gs + (oy_base + ky) * OW + ox_base;
                        const T* wrow = wp + ky * KW;
                        T row = T(0);
                        for (int kx = kx0; kx < kx1; ++kx) row += grow[kx] * wrow[kx];
                        acc += row;
                      }
                    }
                    gxp[iy * IW + ix] += acc;
                  }
                }
              }
          }
          if (T* gw = sink.buffer(kernel)) {
#pragma omp parallel for schedule(static)
            for (int ic = 0; ic < IC; ++ic)
              for (int b = 0; b < B; ++b) {
                const T* xp = x + (static_cast<std::size_t>(b) * IC + ic) * IH * IW;
                for (int oc = 0; oc < OC; ++oc) {
                  const T* gs = g.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                  T* gwp = gw + ((static_cast<std::size_t>(ic) * OC + oc) * KH) * KW;
                  for (int iy = 0; iy < IH; ++iy) {
                    const auto [ky0, ky1] = yr[static_cast<std::size_t>(iy)];
                    const int oy_base = iy * stride - padding;
                    for (int ix = 0; ix < IW; ++ix) {
                      const T xv = xp[iy * IW + ix];
                      if (xv == T(0)) continue;
                      const auto [kx0, kx1] = xr[static_cast<std::size_t>(ix)];
                      const int ox_base = ix * stride - padding;
                      for (int ky = ky0; ky < ky1; ++ky) {
                        const T* grow = gs + (oy_base + ky) * OW + ox_base;
                        T* wrow = gwp + ky * KW;
                        for (int kx = kx0; kx < kx1; ++kx) wrow[kx] += xv * grow[kx];
                      }
                    }
                  }
                }
              }
          }
          if (T* gb = sink.buffer(bias)) {
            for (int b = 0; b < B; ++b)
              for (int oc = 0; oc < OC; ++oc) {
                const T* gs = g.data() + (static_cast<std::size_t>(b) * OC + oc) * OH * OW;
                T acc = T(0);
                for (int i = 0; i < OH * OW; ++i) acc += gs[i];
                gb[oc] += acc;
              }
          }
        });
  }
  return y;
}

// ---------------------------------------------------------------------------
// classification head support

// logits (B,K), labels in [0,K). Mean negative log-likelihood with the
// softmax fused into the pullback.
template <class T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw ShapeError("cross_entropy_logits: logits must be (B,K), got " + shape_str(logits.shape()));
  const int B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("cross_entropy_logits: label count " + std::to_string(labels.size()) + " != batch " +
                     std::to_string(B));
  std::vector<T> probs(static_cast<std::size_t>(B) * K);
  T loss = T(0);
  for (int b = 0; b < B; ++b) {
    if (labels[b] < 0 || labels[b] >= K) throw std::invalid_argument("cross_entropy_logits: label out of range");
    const T* lp = logits.data() + static_cast<std::size_t>(b) * K;
    T mx = lp[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, lp[k]);
    T z = T(0);
    for (int k = 0; k < K; ++k) z += std::exp(lp[k] - mx);
    for (int k = 0; k < K; ++k) probs[static_cast<std::size_t>(b) * K + k] = std::exp(lp[k] - mx) / z;
    loss -= std::log(std::max(probs[static_cast<std::size_t>(b) * K + labels[b]], T(1e-30)));
  }
  loss /= static_cast<T>(B);
  bool tr = detail::track(logits);
  Tensor<T> y = Tensor<T>::make({1}, {loss}, false, tr);
  if (tr) {
    GradTape<T>::active()->record(
        y.id(), [logits, labels, probs = std::move(probs), B, K](const std::vector<T>& g, GradSink<T>& sink) {
          if (T* gl = sink.buffer(logits)) {
            const T s = g[0] / static_cast<T>(B);
            for (int b = 0; b < B; ++b)
              for (int k = 0; k < K; ++k) {
                T p = probs[static_cast<std::size_t>(b) * K + k];
                gl[static_cast<std::size_t>(b) * K + k] += s * (p - (k == labels[b] ? T(1) : T(0)));
              }
          }
        });
  }
  return y;
}

}  // namespace ggb
