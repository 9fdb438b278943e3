#pragma once

// U-Net-like generator. The encoder halves the spatial size N times with
// stride-2 4x4 convolutions down to 1x1; the decoder mirrors it with
// stride-2 4x4 transposed convolutions, concatenating the matching encoder
// feature before every deconv except the first. Every decoder level n
// exposes its feature g^n and a level image through a 1x1 conv + tanh head,
// so outputs live strictly inside (-1, 1).

#include <string>
#include <vector>

#include "ggb/layers.hpp"

namespace ggb {

struct GeneratorConfig {
  int resolution = 64;
  int levels = 6;  // N; resolution must equal 2^N
  int image_channels = 3;
  int cond_channels = 3;
  int base_channels = 16;
  int channel_cap = 64;

  int encoder_out(int k) const {  // k = 1..N
    long c = static_cast<long>(base_channels) << (k - 1);
    return static_cast<int>(std::min<long>(c, channel_cap));
  }
  int decoder_out(int n) const {  // n = 1..N
    return n == levels ? base_channels : encoder_out(levels - n);
  }

  void validate() const {
    if (levels < 2) throw ShapeError("generator: levels must be >= 2");
    if (resolution != (1 << levels))
      throw ShapeError("generator: resolution " + std::to_string(resolution) + " != 2^" +
                       std::to_string(levels));
  }
};

// Per-level outputs of one generator pass.
template <class T>
struct DecodeTrace {
  std::vector<Tensor<T>> features;  // g^n, index 1..N (0 unused)
  std::vector<Tensor<T>> images;    // x-hat^n
  Tensor<T> final;                  // x-hat = x-hat^N

  const Tensor<T>& feature(int n) const { return features.at(static_cast<std::size_t>(n)); }
  const Tensor<T>& image(int n) const { return images.at(static_cast<std::size_t>(n)); }
};

template <class T>
class Generator {
 public:
  GeneratorConfig cfg;
  std::vector<Conv2dLayer<T>> encoder;    // index 0 unused; 1..N
  std::vector<Deconv2dLayer<T>> decoder;  // 1..N, level n produces g^n
  std::vector<Conv2dLayer<T>> heads;      // 1..N, 1x1 conv to image channels

  static Generator init(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Generator g;
    g.cfg = cfg;
    SplitMix64 rng(derive_seed(seed, 0x6e6e7247));
    const int N = cfg.levels;
    g.encoder.resize(static_cast<std::size_t>(N) + 1);
    g.decoder.resize(static_cast<std::size_t>(N) + 1);
    g.heads.resize(static_cast<std::size_t>(N) + 1);
    for (int k = 1; k <= N; ++k) {
      const int in_c = k == 1 ? cfg.image_channels + cfg.cond_channels : cfg.encoder_out(k - 1);
      g.encoder[static_cast<std::size_t>(k)] =
          Conv2dLayer<T>::init("G.enc" + std::to_string(k), in_c, cfg.encoder_out(k), 4, 2, 1, rng);
    }
    for (int n = 1; n <= N; ++n) {
      const int in_c =
          n == 1 ? cfg.encoder_out(N) : cfg.decoder_out(n - 1) + cfg.encoder_out(N - n + 1);
      g.decoder[static_cast<std::size_t>(n)] =
          Deconv2dLayer<T>::init("G.dec" + std::to_string(n), in_c, cfg.decoder_out(n), 4, 2, 1, rng);
      g.heads[static_cast<std::size_t>(n)] =
          Conv2dLayer<T>::init("G.head" + std::to_string(n), cfg.decoder_out(n), cfg.image_channels, 1,
                               1, 0, rng);
    }
    return g;
  }

  // x: (B, image_channels, R, R), label_map: (B, cond_channels, R, R)
  DecodeTrace<T> generate(const Tensor<T>& x, const Tensor<T>& label_map) const {
    if (x.ndim() != 4 || x.dim(2) != cfg.resolution || x.dim(3) != cfg.resolution)
      throw ShapeError("generate: input must be (B," + std::to_string(cfg.image_channels) + "," +
                       std::to_string(cfg.resolution) + "," + std::to_string(cfg.resolution) + "), got " +
                       shape_str(x.shape()));
    if (label_map.ndim() != 4 || label_map.dim(2) != x.dim(2) || label_map.dim(3) != x.dim(3) ||
        label_map.dim(0) != x.dim(0))
      throw ShapeError("generate: label map " + shape_str(label_map.shape()) +
                       " does not match input " + shape_str(x.shape()));
    const int N = cfg.levels;

    std::vector<Tensor<T>> enc(static_cast<std::size_t>(N) + 1);
    Tensor<T> h = concat_channels(x, label_map);
    for (int k = 1; k <= N; ++k) {
      h = leaky_relu(encoder[static_cast<std::size_t>(k)].forward(h), T(0.2));
      enc[static_cast<std::size_t>(k)] = h;
    }

    DecodeTrace<T> trace;
    trace.features.resize(static_cast<std::size_t>(N) + 1);
    trace.images.resize(static_cast<std::size_t>(N) + 1);
    Tensor<T> g = enc[static_cast<std::size_t>(N)];
    for (int n = 1; n <= N; ++n) {
      Tensor<T> in = n == 1 ? g : concat_channels(g, enc[static_cast<std::size_t>(N - n + 1)]);
      g = relu(decoder[static_cast<std::size_t>(n)].forward(in));
      trace.features[static_cast<std::size_t>(n)] = g;
      trace.images[static_cast<std::size_t>(n)] =
          tanh_act(heads[static_cast<std::size_t>(n)].forward(g));
    }
    trace.final = trace.images[static_cast<std::size_t>(N)];
    return trace;
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (int k = 1; k <= cfg.levels; ++k) encoder[static_cast<std::size_t>(k)].collect(out);
    for (int n = 1; n <= cfg.levels; ++n) {
      decoder[static_cast<std::size_t>(n)].collect(out);
      heads[static_cast<std::size_t>(n)].collect(out);
    }
    return out;
  }

  // Splits parameters into the final decoding stage (the deconv layer and
  // head that produce g^N / x-hat^N) and everything else. The two sets are
  // disjoint and jointly exhaustive.
  struct Partition {
    std::vector<Param<T>*> final_stage;
    std::vector<Param<T>*> remaining;
  };

  Partition partition() {
    Partition p;
    decoder[static_cast<std::size_t>(cfg.levels)].collect(p.final_stage);
    heads[static_cast<std::size_t>(cfg.levels)].collect(p.final_stage);
    for (int k = 1; k <= cfg.levels; ++k) encoder[static_cast<std::size_t>(k)].collect(p.remaining);
    for (int n = 1; n < cfg.levels; ++n) {
      decoder[static_cast<std::size_t>(n)].collect(p.remaining);
      heads[static_cast<std::size_t>(n)].collect(p.remaining);
    }
    return p;
  }
};

}  // namespace ggb
