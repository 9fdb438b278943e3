#pragma once

#include <string>
#include <vector>

#include "ggb/adam.hpp"
#include "ggb/ops.hpp"
#include "ggb/rng.hpp"
#include "ggb/tensor.hpp"

namespace ggb {

// Weight init: zero-mean normal, std 0.02; biases zero.
inline constexpr double kWeightInitStd = 0.02;

template <class T>
struct Conv2dLayer {
  Param<T> weight;  // (OC, IC, KH, KW)
  Param<T> bias;    // (OC)
  int stride = 2;
  int padding = 1;

  static Conv2dLayer init(const std::string& name, int in_c, int out_c, int k, int stride, int padding,
                          SplitMix64& rng) {
    Conv2dLayer l;
    l.weight.name = name + ".weight";
    l.weight.value = Tensor<T>::randn({out_c, in_c, k, k}, rng, static_cast<T>(kWeightInitStd), true);
    l.bias.name = name + ".bias";
    l.bias.value = Tensor<T>::zeros({out_c}, true);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight.value, bias.value, stride, padding); }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <class T>
struct Deconv2dLayer {
  Param<T> weight;  // (IC, OC, KH, KW)
  Param<T> bias;    // (OC)
  int stride = 2;
  int padding = 1;

  static Deconv2dLayer init(const std::string& name, int in_c, int out_c, int k, int stride, int padding,
                            SplitMix64& rng) {
    Deconv2dLayer l;
    l.weight.name = name + ".weight";
    l.weight.value = Tensor<T>::randn({in_c, out_c, k, k}, rng, static_cast<T>(kWeightInitStd), true);
    l.bias.name = name + ".bias";
    l.bias.value = Tensor<T>::zeros({out_c}, true);
    l.stride = stride;
    l.padding = padding;
    return l;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    return deconv2d(x, weight.value, bias.value, stride, padding);
  }

  void collect(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

}  // namespace ggb
