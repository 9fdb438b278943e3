#pragma once

// Procedural appearance/variation image pairs: articulated stick figures
// with per-identity colors, a two-tone torso texture and per-identity
// thicknesses, posed by an 8-keypoint skeleton. Identity controls
// appearance only; the skeleton geometry comes solely from the
// VariationSpec, so pose and appearance factorize cleanly.
//
// Rendering is a pure function of (identity seed, variation, resolution):
// same inputs give bit-identical output.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ggb/image_io.hpp"
#include "ggb/ops.hpp"
#include "ggb/rng.hpp"
#include "ggb/tensor.hpp"

namespace ggb::synth {

inline constexpr int kNumKeypoints = 8;  // head, pelvis, elbows, hands, feet
inline constexpr int kNumPaletteClasses = 8;

struct Vec2 {
  double x = 0, y = 0;
};

// Target (or source) variation: keypoints in the unit square plus a global
// rigid offset applied at render/encode time. The figure sampler always
// produces the full 8-point skeleton; label-map encoding accepts any list.
struct VariationSpec {
  std::vector<Vec2> keypoints;  // unit-square coordinates
  double rotation = 0.0;        // radians, about the pelvis
  Vec2 translation{};           // normalized offsets

  bool operator==(const VariationSpec& o) const {
    if (keypoints.size() != o.keypoints.size()) return false;
    for (std::size_t i = 0; i < keypoints.size(); ++i)
      if (keypoints[i].x != o.keypoints[i].x || keypoints[i].y != o.keypoints[i].y) return false;
    return rotation == o.rotation && translation.x == o.translation.x && translation.y == o.translation.y;
  }
};

enum KeypointIndex { kHead = 0, kPelvis, kElbowL, kElbowR, kHandL, kHandR, kFootL, kFootR };

// Rigid motion applied to the stored keypoints, clamped into the frame.
inline std::vector<Vec2> effective_keypoints(const VariationSpec& v) {
  std::vector<Vec2> out(v.keypoints.size());
  if (out.empty()) return out;
  Vec2 pivot;
  if (v.keypoints.size() > kPelvis) {
    pivot = v.keypoints[kPelvis];
  } else {
    for (const auto& kp : v.keypoints) {
      pivot.x += kp.x / static_cast<double>(v.keypoints.size());
      pivot.y += kp.y / static_cast<double>(v.keypoints.size());
    }
  }
  const double cs = std::cos(v.rotation), sn = std::sin(v.rotation);
  for (std::size_t i = 0; i < v.keypoints.size(); ++i) {
    const double dx = v.keypoints[i].x - pivot.x;
    const double dy = v.keypoints[i].y - pivot.y;
    double x = pivot.x + cs * dx - sn * dy + v.translation.x;
    double y = pivot.y + sn * dx + cs * dy + v.translation.y;
    out[i] = {std::min(0.98, std::max(0.02, x)), std::min(0.98, std::max(0.02, y))};
  }
  return out;
}

// Canonical skeleton proportions (shared by every identity).
namespace skel {
inline constexpr double kTorsoLen = 0.26;
inline constexpr double kHeadOffset = 0.085;
inline constexpr double kUpperArm = 0.13;
inline constexpr double kForearm = 0.12;
inline constexpr double kLeg = 0.24;
inline constexpr Vec2 kPelvisBase{0.5, 0.60};
}  // namespace skel

inline VariationSpec sample_variation(SplitMix64& rng) {
  VariationSpec v;
  v.keypoints.resize(kNumKeypoints);
  const double lean = rng.uniform(-0.25, 0.25);
  const Vec2 pelvis = skel::kPelvisBase;
  const Vec2 up{std::sin(lean), -std::cos(lean)};
  const Vec2 neck{pelvis.x + skel::kTorsoLen * up.x, pelvis.y + skel::kTorsoLen * up.y};
  v.keypoints[kPelvis] = pelvis;
  v.keypoints[kHead] = {neck.x + skel::kHeadOffset * up.x, neck.y + skel::kHeadOffset * up.y};

  // Arm/leg angles are measured from straight down; wide ranges give the
  // large deformations the task is about.
  auto limb = [](Vec2 root, double angle, double len) {
    return Vec2{root.x + len * std::sin(angle), root.y + len * std::cos(angle)};
  };
  const double ua_l = rng.uniform(-2.6, -0.3);
  const double ua_r = rng.uniform(0.3, 2.6);
  v.keypoints[kElbowL] = limb(neck, ua_l, skel::kUpperArm);
  v.keypoints[kElbowR] = limb(neck, ua_r, skel::kUpperArm);
  v.keypoints[kHandL] = limb(v.keypoints[kElbowL], ua_l + rng.uniform(-0.9, 0.9), skel::kForearm);
  v.keypoints[kHandR] = limb(v.keypoints[kElbowR], ua_r + rng.uniform(-0.9, 0.9), skel::kForearm);
  v.keypoints[kFootL] = limb(pelvis, rng.uniform(-0.75, -0.08), skel::kLeg);
  v.keypoints[kFootR] = limb(pelvis, rng.uniform(0.08, 0.75), skel::kLeg);

  v.rotation = rng.uniform(-0.40, 0.40);
  v.translation = {rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08)};
  return v;
}

struct Color {
  double r = 0, g = 0, b = 0;
};

// Appearance attributes. Thicknesses shape silhouettes but never move a
// keypoint, so identity changes keep the skeleton fixed.
struct IdentityAttrs {
  int palette_class = 0;
  Color torso_a, torso_b, limbs, head, background;
  double limb_radius = 0.024;
  double leg_radius = 0.030;
  double torso_radius = 0.058;
  double head_radius = 0.065;
  int stripe_count = 4;
  double stripe_phase = 0.0;
};

inline IdentityAttrs identity_attrs(std::uint64_t identity_seed) {
  static constexpr Color kPalette[kNumPaletteClasses] = {
      {0.86, 0.22, 0.20}, {0.22, 0.48, 0.85}, {0.20, 0.72, 0.32}, {0.88, 0.66, 0.16},
      {0.62, 0.28, 0.76}, {0.16, 0.70, 0.70}, {0.88, 0.42, 0.62}, {0.55, 0.44, 0.26}};
  IdentityAttrs id;
  id.palette_class = static_cast<int>(identity_seed % kNumPaletteClasses);
  SplitMix64 rng(derive_seed(identity_seed, 0x1de2717f));
  auto jitter = [&](Color c, double amt) {
    auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
    return Color{clamp01(c.r + rng.uniform(-amt, amt)), clamp01(c.g + rng.uniform(-amt, amt)),
                 clamp01(c.b + rng.uniform(-amt, amt))};
  };
  const Color base = kPalette[id.palette_class];
  id.torso_a = jitter(base, 0.07);
  id.torso_b = jitter(Color{base.r * 0.45 + 0.18, base.g * 0.45 + 0.18, base.b * 0.45 + 0.18}, 0.05);
  id.limbs = jitter(Color{0.25 + 0.5 * base.g, 0.25 + 0.5 * base.b, 0.25 + 0.5 * base.r}, 0.08);
  id.head = jitter(Color{0.92, 0.78, 0.62}, 0.06);
  id.background = jitter(Color{0.84, 0.84, 0.86}, 0.05);
  id.limb_radius = rng.uniform(0.018, 0.030);
  id.leg_radius = rng.uniform(0.022, 0.036);
  id.torso_radius = rng.uniform(0.050, 0.068);
  id.head_radius = rng.uniform(0.055, 0.075);
  id.stripe_count = 3 + rng.below(4);
  id.stripe_phase = rng.uniform();
  return id;
}

namespace detail {

inline double capsule_distance(Vec2 p, Vec2 a, Vec2 b, double* axis_t = nullptr) {
  const double abx = b.x - a.x, aby = b.y - a.y;
  const double len2 = abx * abx + aby * aby;
  double t = len2 > 0 ? ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2 : 0.0;
  t = std::min(1.0, std::max(0.0, t));
  if (axis_t) *axis_t = t;
  const double dx = p.x - (a.x + t * abx), dy = p.y - (a.y + t * aby);
  return std::sqrt(dx * dx + dy * dy);
}

struct Paint {
  Color color;
  double alpha = 0.0;
};

inline void blend(Color& dst, const Paint& p) {
  dst.r = dst.r * (1 - p.alpha) + p.color.r * p.alpha;
  dst.g = dst.g * (1 - p.alpha) + p.color.g * p.alpha;
  dst.b = dst.b * (1 - p.alpha) + p.color.b * p.alpha;
}

}  // namespace detail

// Renders channel-major RGB in [-1, 1], size 3*res*res.
inline std::vector<double> render_figure(const IdentityAttrs& id, const VariationSpec& v, int res) {
  if (v.keypoints.size() != kNumKeypoints)
    throw std::invalid_argument("figure rendering needs the full 8-keypoint skeleton");
  const auto kp = effective_keypoints(v);
  const double px = 1.0 / res;  // anti-aliasing width

  // Arms root slightly below the head along the torso axis.
  const Vec2 pelvis = kp[kPelvis], head = kp[kHead];
  const double tlen = std::hypot(head.x - pelvis.x, head.y - pelvis.y);
  const Vec2 up = tlen > 0 ? Vec2{(head.x - pelvis.x) / tlen, (head.y - pelvis.y) / tlen} : Vec2{0, -1};
  const Vec2 neck{head.x - skel::kHeadOffset * up.x, head.y - skel::kHeadOffset * up.y};

  std::vector<double> out(static_cast<std::size_t>(3) * res * res);
  for (int yi = 0; yi < res; ++yi) {
    for (int xi = 0; xi < res; ++xi) {
      const Vec2 p{(xi + 0.5) * px, (yi + 0.5) * px};
      Color c = id.background;
      auto alpha_of = [&](double dist, double radius) {
        return std::min(1.0, std::max(0.0, 0.5 - (dist - radius) / px));
      };
      // back-to-front: legs, torso, arms, head
      detail::blend(c, {id.limbs, alpha_of(detail::capsule_distance(p, pelvis, kp[kFootL]), id.leg_radius)});
      detail::blend(c, {id.limbs, alpha_of(detail::capsule_distance(p, pelvis, kp[kFootR]), id.leg_radius)});
      {
        double t = 0;
        const double d = detail::capsule_distance(p, pelvis, neck, &t);
        const int stripe = static_cast<int>(std::floor(t * id.stripe_count + id.stripe_phase)) & 1;
        detail::blend(c, {stripe ? id.torso_b : id.torso_a, alpha_of(d, id.torso_radius)});
      }
      detail::blend(c, {id.limbs, alpha_of(detail::capsule_distance(p, neck, kp[kElbowL]), id.limb_radius)});
      detail::blend(c, {id.limbs, alpha_of(detail::capsule_distance(p, kp[kElbowL], kp[kHandL]), id.limb_radius)});
      detail::blend(c, {id.limbs, alpha_of(detail::capsule_distance(p, neck, kp[kElbowR]), id.limb_radius)});
      detail::blend(c, {id.limbs, alpha_of(detail::capsule_distance(p, kp[kElbowR], kp[kHandR]), id.limb_radius)});
      detail::blend(c, {id.head, alpha_of(std::hypot(p.x - head.x, p.y - head.y), id.head_radius)});

      const std::size_t i = static_cast<std::size_t>(yi) * res + xi;
      out[i] = c.r * 2 - 1;
      out[static_cast<std::size_t>(res) * res + i] = c.g * 2 - 1;
      out[2 * static_cast<std::size_t>(res) * res + i] = c.b * 2 - 1;
    }
  }
  return out;
}

inline void require_resolution(int res) {
  if (res < 32 || (res & (res - 1)) != 0)
    throw std::invalid_argument("resolution must be a power of two >= 32, got " + std::to_string(res));
}

// Per-keypoint Gaussian spots, peak 1.0 at the keypoint pixel, keypoints
// distributed round-robin over the image channels, spots summed.
template <class T>
Tensor<T> encode_label_map(const VariationSpec& c, int resolution) {
  require_resolution(resolution);
  const auto kp = effective_keypoints(c);
  const double sigma = resolution / 16.0;
  std::vector<T> map(static_cast<std::size_t>(3) * resolution * resolution, T(0));
  for (int i = 0; i < static_cast<int>(kp.size()); ++i) {
    const int ch = i % 3;
    const int cx = std::min(resolution - 1, static_cast<int>(kp[i].x * resolution));
    const int cy = std::min(resolution - 1, static_cast<int>(kp[i].y * resolution));
    T* plane = map.data() + static_cast<std::size_t>(ch) * resolution * resolution;
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x) {
        const double d2 = static_cast<double>(x - cx) * (x - cx) + static_cast<double>(y - cy) * (y - cy);
        plane[static_cast<std::size_t>(y) * resolution + x] +=
            static_cast<T>(std::exp(-d2 / (2.0 * sigma * sigma)));
      }
  }
  return Tensor<T>::from_data({1, 3, resolution, resolution}, std::move(map));
}

template <class T>
struct SamplePair {
  Tensor<T> x;    // source image (1,3,R,R) in [-1,1]
  Tensor<T> y;    // target image
  VariationSpec c;
  Tensor<T> label_map;  // M_c, same shape as x
  std::uint64_t identity_seed = 0;
};

template <class T>
Tensor<T> image_tensor_from_rgb(const std::vector<double>& chw, int res) {
  std::vector<T> data(chw.size());
  for (std::size_t i = 0; i < chw.size(); ++i) data[i] = static_cast<T>(chw[i]);
  return Tensor<T>::from_data({1, 3, res, res}, std::move(data));
}

template <class T>
SamplePair<T> render_sample(std::uint64_t identity_seed, const VariationSpec& source,
                            const VariationSpec& target, int resolution) {
  require_resolution(resolution);
  const IdentityAttrs id = identity_attrs(identity_seed);
  SamplePair<T> pair;
  pair.identity_seed = identity_seed;
  pair.c = target;
  pair.x = image_tensor_from_rgb<T>(render_figure(id, source, resolution), resolution);
  pair.y = target == source ? pair.x
                            : image_tensor_from_rgb<T>(render_figure(id, target, resolution), resolution);
  pair.label_map = encode_label_map<T>(target, resolution);
  return pair;
}

// Pyramid of (x^n, y^n): level N is the full-resolution pair and level n is
// exactly downsample(level N, 2^(N-n)).
template <class T>
struct ImagePyramid {
  int num_levels = 0;
  std::vector<Tensor<T>> x_levels;  // index 0 unused; 1..N
  std::vector<Tensor<T>> y_levels;

  const Tensor<T>& x(int n) const { return x_levels.at(static_cast<std::size_t>(n)); }
  const Tensor<T>& y(int n) const { return y_levels.at(static_cast<std::size_t>(n)); }
};

template <class T>
ImagePyramid<T> build_pyramid(const SamplePair<T>& pair, int num_levels) {
  const int res = pair.x.dim(2);
  const int denom = 1 << (num_levels - 1);
  if (num_levels < 1 || res % denom != 0)
    throw ShapeError("build_pyramid: resolution " + std::to_string(res) + " not divisible by 2^" +
                     std::to_string(num_levels - 1));
  ImagePyramid<T> pyr;
  pyr.num_levels = num_levels;
  pyr.x_levels.resize(static_cast<std::size_t>(num_levels) + 1);
  pyr.y_levels.resize(static_cast<std::size_t>(num_levels) + 1);
  for (int n = num_levels; n >= 1; --n) {
    const int factor = 1 << (num_levels - n);
    pyr.x_levels[static_cast<std::size_t>(n)] = factor == 1 ? pair.x : downsample(pair.x, factor);
    pyr.y_levels[static_cast<std::size_t>(n)] = factor == 1 ? pair.y : downsample(pair.y, factor);
  }
  return pyr;
}

// ---------------------------------------------------------------------------
// dataset

struct DatasetConfig {
  int resolution = 64;
  int size = 2000;
  std::uint64_t seed = 1;
  bool test_split = false;  // test identities come from a disjoint seed range
};

struct SampleRecord {
  std::uint64_t identity_seed = 0;
  int palette_class = 0;
  VariationSpec source, target;
  std::vector<unsigned char> x_bytes, y_bytes;  // quantized [-1,1] -> [0,255]
};

// Identity ranges keep test identities unseen during training.
inline std::uint64_t identity_for(const DatasetConfig& cfg, int index) {
  const std::uint64_t base = cfg.test_split ? 2'000'000'000ULL : 1'000ULL;
  return base + static_cast<std::uint64_t>(index);
}

class SyntheticDataset {
 public:
  static SyntheticDataset generate(const DatasetConfig& cfg) {
    require_resolution(cfg.resolution);
    SyntheticDataset ds;
    ds.cfg_ = cfg;
    ds.records_.reserve(static_cast<std::size_t>(cfg.size));
    for (int i = 0; i < cfg.size; ++i) {
      SampleRecord rec;
      rec.identity_seed = identity_for(cfg, i);
      rec.palette_class = identity_attrs(rec.identity_seed).palette_class;
      SplitMix64 rng(derive_seed(cfg.seed, (cfg.test_split ? 0x7e577e57ULL << 32 : 0) |
                                               static_cast<std::uint64_t>(i)));
      rec.source = sample_variation(rng);
      rec.target = sample_variation(rng);
      const IdentityAttrs id = identity_attrs(rec.identity_seed);
      rec.x_bytes = quantize(render_figure(id, rec.source, cfg.resolution));
      rec.y_bytes = quantize(render_figure(id, rec.target, cfg.resolution));
      ds.records_.push_back(std::move(rec));
    }
    return ds;
  }

  const DatasetConfig& config() const { return cfg_; }
  int size() const { return static_cast<int>(records_.size()); }
  int resolution() const { return cfg_.resolution; }
  const SampleRecord& record(int i) const { return records_.at(static_cast<std::size_t>(i)); }

  template <class T>
  struct Batch {
    Tensor<T> x, y, label_map;       // (B,3,R,R)
    std::vector<int> palette_class;  // per item
    std::uint64_t content_hash = 0;
  };

  template <class T>
  Batch<T> batch(const std::vector<int>& indices) const {
    const int B = static_cast<int>(indices.size());
    const int R = cfg_.resolution;
    const std::size_t per = static_cast<std::size_t>(3) * R * R;
    std::vector<T> x(per * B), y(per * B), m(per * B);
    Batch<T> out;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int b = 0; b < B; ++b) {
      const SampleRecord& rec = records_.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(b)]));
      for (std::size_t i = 0; i < per; ++i) {
        x[b * per + i] = static_cast<T>(img::dequantize_unit(rec.x_bytes[i]));
        y[b * per + i] = static_cast<T>(img::dequantize_unit(rec.y_bytes[i]));
      }
      Tensor<T> lm = encode_label_map<T>(rec.target, R);
      std::copy_n(lm.data(), per, m.data() + b * per);
      out.palette_class.push_back(rec.palette_class);
      h = fnv1a64(rec.x_bytes.data(), rec.x_bytes.size(), h);
      h = fnv1a64(rec.y_bytes.data(), rec.y_bytes.size(), h);
    }
    out.x = Tensor<T>::from_data({B, 3, R, R}, std::move(x));
    out.y = Tensor<T>::from_data({B, 3, R, R}, std::move(y));
    out.label_map = Tensor<T>::from_data({B, 3, R, R}, std::move(m));
    out.content_hash = h;
    return out;
  }

  // Deterministic epoch-permutation sampling; a step's indices depend only
  // on (dataset seed, step, batch size), so training is resumable.
  std::vector<int> indices_for_step(long step, int batch_size) const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(batch_size));
    const long n = size();
    long cursor = step * static_cast<long>(batch_size);
    while (static_cast<int>(out.size()) < batch_size) {
      const long epoch = cursor / n;
      const long offset = cursor % n;
      std::vector<int> perm = epoch_permutation(epoch);
      const long take = std::min<long>(n - offset, batch_size - static_cast<long>(out.size()));
      for (long i = 0; i < take; ++i) out.push_back(perm[static_cast<std::size_t>(offset + i)]);
      cursor += take;
    }
    return out;
  }

  template <class T>
  SamplePair<T> pair_at(int i) const {
    const SampleRecord& rec = records_.at(static_cast<std::size_t>(i));
    const int R = cfg_.resolution;
    const std::size_t per = static_cast<std::size_t>(3) * R * R;
    std::vector<T> x(per), y(per);
    for (std::size_t k = 0; k < per; ++k) {
      x[k] = static_cast<T>(img::dequantize_unit(rec.x_bytes[k]));
      y[k] = static_cast<T>(img::dequantize_unit(rec.y_bytes[k]));
    }
    SamplePair<T> pair;
    pair.identity_seed = rec.identity_seed;
    pair.c = rec.target;
    pair.x = Tensor<T>::from_data({1, 3, R, R}, std::move(x));
    pair.y = Tensor<T>::from_data({1, 3, R, R}, std::move(y));
    pair.label_map = encode_label_map<T>(rec.target, R);
    return pair;
  }

  void write_cache(const std::string& dir) const;
  static SyntheticDataset read_cache(const std::string& dir);

 private:
  static std::vector<unsigned char> quantize(const std::vector<double>& chw) {
    std::vector<unsigned char> out(chw.size());
    for (std::size_t i = 0; i < chw.size(); ++i) out[i] = img::quantize_unit(chw[i]);
    return out;
  }

  std::vector<int> epoch_permutation(long epoch) const {
    std::vector<int> perm(static_cast<std::size_t>(size()));
    for (int i = 0; i < size(); ++i) perm[static_cast<std::size_t>(i)] = i;
    SplitMix64 rng(derive_seed(cfg_.seed, 0xe90cULL + static_cast<std::uint64_t>(epoch)));
    for (int i = size() - 1; i > 0; --i) std::swap(perm[static_cast<std::size_t>(i)],
                                                   perm[static_cast<std::size_t>(rng.below(i + 1))]);
    return perm;
  }

  DatasetConfig cfg_;
  std::vector<SampleRecord> records_;
};

// ---------------------------------------------------------------------------
// on-disk cache: lossless 8-bit images plus a one-record-per-line manifest

inline std::string variation_to_string(const VariationSpec& v) {
  std::ostringstream os;
  os.precision(17);
  for (const auto& kp : v.keypoints) os << kp.x << "," << kp.y << ",";
  os << v.rotation << "," << v.translation.x << "," << v.translation.y;
  return os.str();
}

inline VariationSpec variation_from_string(const std::string& s) {
  VariationSpec v;
  std::istringstream is(s);
  std::string tok;
  std::vector<double> vals;
  while (std::getline(is, tok, ',')) vals.push_back(std::stod(tok));
  if (vals.size() < 3 || (vals.size() - 3) % 2 != 0)
    throw std::runtime_error("bad variation record: " + s);
  const std::size_t n = (vals.size() - 3) / 2;
  v.keypoints.resize(n);
  for (std::size_t i = 0; i < n; ++i) v.keypoints[i] = {vals[2 * i], vals[2 * i + 1]};
  v.rotation = vals[2 * n];
  v.translation = {vals[2 * n + 1], vals[2 * n + 2]};
  return v;
}

inline img::Image8 bytes_to_image(const std::vector<unsigned char>& chw, int res) {
  img::Image8 im;
  im.width = im.height = res;
  im.rgb.resize(static_cast<std::size_t>(res) * res * 3);
  const std::size_t plane = static_cast<std::size_t>(res) * res;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) im.rgb[i * 3 + c] = chw[c * plane + i];
  return im;
}

inline std::vector<unsigned char> image_to_bytes(const img::Image8& im) {
  const std::size_t plane = static_cast<std::size_t>(im.width) * im.height;
  std::vector<unsigned char> chw(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) chw[c * plane + i] = im.rgb[i * 3 + c];
  return chw;
}

inline void SyntheticDataset::write_cache(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest << "resolution=" << cfg_.resolution << " seed=" << cfg_.seed
           << " test_split=" << (cfg_.test_split ? 1 : 0) << "\n";
  char name[64];
  for (int i = 0; i < size(); ++i) {
    const SampleRecord& rec = records_[static_cast<std::size_t>(i)];
    std::snprintf(name, sizeof(name), "x_%06d.ppm", i);
    const std::string xp = name;
    std::snprintf(name, sizeof(name), "y_%06d.ppm", i);
    const std::string yp = name;
    img::write_ppm(dir + "/" + xp, bytes_to_image(rec.x_bytes, cfg_.resolution));
    img::write_ppm(dir + "/" + yp, bytes_to_image(rec.y_bytes, cfg_.resolution));
    manifest << "seed=" << rec.identity_seed << " class=" << rec.palette_class << " x=" << xp
             << " y=" << yp << " src=" << variation_to_string(rec.source)
             << " tgt=" << variation_to_string(rec.target) << "\n";
  }
}

inline SyntheticDataset SyntheticDataset::read_cache(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest.txt");
  if (!manifest) throw std::runtime_error("cannot read manifest in " + dir);
  std::string header;
  std::getline(manifest, header);
  SyntheticDataset ds;
  {
    std::istringstream is(header);
    std::string kv;
    while (is >> kv) {
      const auto eq = kv.find('=');
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "resolution") ds.cfg_.resolution = std::stoi(val);
      if (key == "seed") ds.cfg_.seed = std::stoull(val);
      if (key == "test_split") ds.cfg_.test_split = val == "1";
    }
  }
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    SampleRecord rec;
    std::istringstream is(line);
    std::string kv, xp, yp;
    while (is >> kv) {
      const auto eq = kv.find('=');
      const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
      if (key == "seed") rec.identity_seed = std::stoull(val);
      if (key == "class") rec.palette_class = std::stoi(val);
      if (key == "x") xp = val;
      if (key == "y") yp = val;
      if (key == "src") rec.source = variation_from_string(val);
      if (key == "tgt") rec.target = variation_from_string(val);
    }
    rec.x_bytes = image_to_bytes(img::read_ppm(dir + "/" + xp));
    rec.y_bytes = image_to_bytes(img::read_ppm(dir + "/" + yp));
    ds.records_.push_back(std::move(rec));
  }
  ds.cfg_.size = ds.size();
  return ds;
}

}  // namespace ggb::synth
