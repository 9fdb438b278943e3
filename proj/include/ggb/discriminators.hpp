#pragma once

// Global discriminator and the per-level guiding block (GGB) parts: the
// shared feature encoder f, the appearance discriminator (RAPD) and the
// variation discriminator (NVTD). Score heads are global average pooling
// followed by a 1x1 projection and a sigmoid, so every score is strictly
// inside (0,1).
//
// NVTD only ever sees residuals f(x^n) - f(.). The residual is wrapped in
// its own type so raw encodings cannot be routed into nvtd_score.

#include <array>
#include <string>
#include <vector>

#include "ggb/layers.hpp"

namespace ggb {

// Keeps scores strictly open: float32 sigmoid rounds to exactly 1.0 (or 0.0)
// once a discriminator saturates, which would poison the log terms.
inline constexpr double kScoreOpenEps = 1e-7;

namespace disc_detail {
template <class T>
Tensor<T> open_unit_interval(const Tensor<T>& s) {
  return clamp(s, static_cast<T>(kScoreOpenEps), T(1) - static_cast<T>(kScoreOpenEps));
}
}  // namespace disc_detail

template <class T>
class GlobalDiscriminator {
 public:
  static constexpr int kConvLayers = 5;
  std::array<Conv2dLayer<T>, kConvLayers> convs;  // 4x4, stride 2
  Conv2dLayer<T> head;                            // 1x1 projection to one logit
  int image_channels = 3;

  static GlobalDiscriminator init(int image_channels, int base_channels, int channel_cap,
                                  std::uint64_t seed) {
    GlobalDiscriminator d;
    d.image_channels = image_channels;
    SplitMix64 rng(derive_seed(seed, 0x44697363));
    int in_c = image_channels;
    for (int i = 0; i < kConvLayers; ++i) {
      const int out_c =
          static_cast<int>(std::min<long>(static_cast<long>(base_channels) << i, channel_cap));
      d.convs[static_cast<std::size_t>(i)] =
          Conv2dLayer<T>::init("D.conv" + std::to_string(i + 1), in_c, out_c, 4, 2, 1, rng);
      in_c = out_c;
    }
    d.head = Conv2dLayer<T>::init("D.head", in_c, 1, 1, 1, 0, rng);
    return d;
  }

  // (B,C,R,R) -> (B,1) scores in (0,1)
  Tensor<T> score(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(1) != image_channels)
      throw ShapeError("discriminator: expected (B," + std::to_string(image_channels) +
                       ",H,W), got " + shape_str(image.shape()));
    Tensor<T> h = image;
    for (const auto& c : convs) h = leaky_relu(c.forward(h), T(0.2));
    Tensor<T> s = disc_detail::open_unit_interval(sigmoid(head.forward(global_avg_pool(h))));
    return reshape(s, {s.dim(0), 1});
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& c : convs) c.collect(out);
    head.collect(out);
    return out;
  }
};

// Encoded image feature f(.), usable by RAPD.
template <class T>
struct EncodedFeature {
  Tensor<T> value;
};

// Residual feature f(x^n) - f(other); the only currency NVTD accepts.
template <class T>
struct ResidualFeature {
  Tensor<T> value;
};

template <class T>
class GuidingBlock {
 public:
  int level = 0;             // decoder level n this block is attached to
  int level_resolution = 0;  // 2^n
  Conv2dLayer<T> f1, f2;     // feature encoder: two 4x4 stride-2 convs
  std::array<Conv2dLayer<T>, 3> rapd_convs;
  Conv2dLayer<T> rapd_head;
  std::array<Conv2dLayer<T>, 3> nvtd_convs;
  Conv2dLayer<T> nvtd_head;

  static GuidingBlock init(int level, int image_channels, int base_channels, int channel_cap,
                           std::uint64_t seed) {
    GuidingBlock b;
    b.level = level;
    b.level_resolution = 1 << level;
    if (b.level_resolution < 4)
      throw ShapeError("guiding block at level " + std::to_string(level) +
                       " needs resolution >= 4 for its two stride-2 encoder convs");
    SplitMix64 rng(derive_seed(seed, 0x67676200ULL + static_cast<std::uint64_t>(level)));
    const std::string prefix = "GGB" + std::to_string(level);
    const int width = static_cast<int>(std::min<long>(2L * base_channels, channel_cap));
    b.f1 = Conv2dLayer<T>::init(prefix + ".f1", image_channels, width, 4, 2, 1, rng);
    b.f2 = Conv2dLayer<T>::init(prefix + ".f2", width, width, 4, 2, 1, rng);
    for (int i = 0; i < 3; ++i) {
      b.rapd_convs[static_cast<std::size_t>(i)] =
          Conv2dLayer<T>::init(prefix + ".rapd" + std::to_string(i + 1), width, width, 3, 1, 1, rng);
      b.nvtd_convs[static_cast<std::size_t>(i)] =
          Conv2dLayer<T>::init(prefix + ".nvtd" + std::to_string(i + 1), width, width, 3, 1, 1, rng);
    }
    b.rapd_head = Conv2dLayer<T>::init(prefix + ".rapd_head", width, 1, 1, 1, 0, rng);
    b.nvtd_head = Conv2dLayer<T>::init(prefix + ".nvtd_head", width, 1, 1, 1, 0, rng);
    return b;
  }

  // f(.) shared by the x^n / y^n / x-hat^n uses; output spatial size is the
  // level resolution / 4.
  EncodedFeature<T> encode(const Tensor<T>& image) const {
    if (image.ndim() != 4 || image.dim(2) != level_resolution || image.dim(3) != level_resolution)
      throw ShapeError("guiding block level " + std::to_string(level) + ": expected spatial size " +
                       std::to_string(level_resolution) + ", got " + shape_str(image.shape()));
    Tensor<T> h = leaky_relu(f1.forward(image), T(0.2));
    h = leaky_relu(f2.forward(h), T(0.2));
    return {h};
  }

  ResidualFeature<T> residual(const Tensor<T>& x_level, const Tensor<T>& other) const {
    return {sub(encode(x_level).value, encode(other).value)};
  }

  // Same difference from already-encoded features (one image often feeds
  // both discriminator branches; callers cache the encodings).
  ResidualFeature<T> residual(const EncodedFeature<T>& fx, const EncodedFeature<T>& fother) const {
    return {sub(fx.value, fother.value)};
  }

  Tensor<T> rapd_score(const EncodedFeature<T>& encoded) const {
    return score_branch(rapd_convs, rapd_head, encoded.value);
  }

  Tensor<T> nvtd_score(const ResidualFeature<T>& residual_feature) const {
    return score_branch(nvtd_convs, nvtd_head, residual_feature.value);
  }

  std::vector<Param<T>*> encoder_parameters() {
    std::vector<Param<T>*> out;
    f1.collect(out);
    f2.collect(out);
    return out;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out = encoder_parameters();
    for (auto& c : rapd_convs) c.collect(out);
    rapd_head.collect(out);
    for (auto& c : nvtd_convs) c.collect(out);
    nvtd_head.collect(out);
    return out;
  }

 private:
  Tensor<T> score_branch(const std::array<Conv2dLayer<T>, 3>& convs, const Conv2dLayer<T>& head,
                         const Tensor<T>& feature) const {
    Tensor<T> h = feature;
    for (const auto& c : convs) h = leaky_relu(c.forward(h), T(0.2));
    Tensor<T> s = disc_detail::open_unit_interval(sigmoid(head.forward(global_avg_pool(h))));
    return reshape(s, {s.dim(0), 1});
  }
};

}  // namespace ggb
