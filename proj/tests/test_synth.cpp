#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "ggb/synth.hpp"

using ggb::SplitMix64;
using ggb::Tensor;
namespace synth = ggb::synth;

namespace {

synth::VariationSpec variation(std::uint64_t seed) {
  SplitMix64 rng(seed);
  return synth::sample_variation(rng);
}

// foreground = pixels that differ from the top-left background pixel
std::vector<bool> foreground_mask(const Tensor<double>& img) {
  const long plane = static_cast<long>(img.dim(2)) * img.dim(3);
  std::vector<bool> mask(static_cast<std::size_t>(plane));
  for (long i = 0; i < plane; ++i) {
    bool fg = false;
    for (int c = 0; c < 3; ++c)
      if (std::fabs(img.data()[c * plane + i] - img.data()[c * plane]) > 1e-9) fg = true;
    mask[static_cast<std::size_t>(i)] = fg;
  }
  return mask;
}

}  // namespace

TEST_CASE("identity variation reproduces the source bit-exactly") {
  auto v = variation(5);
  auto pair = synth::render_sample<double>(42, v, v, 64);
  CHECK(pair.x.vec() == pair.y.vec());
}

TEST_CASE("rendering is deterministic") {
  auto src = variation(1), tgt = variation(2);
  auto a = synth::render_sample<double>(7, src, tgt, 64);
  auto b = synth::render_sample<double>(7, src, tgt, 64);
  CHECK(a.x.vec() == b.x.vec());
  CHECK(a.y.vec() == b.y.vec());
  CHECK(a.label_map.vec() == b.label_map.vec());
}

TEST_CASE("pixel values stay in [-1,1] and finite") {
  auto pair = synth::render_sample<double>(11, variation(3), variation(4), 64);
  for (auto v : pair.x.vec()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK(pair.x.all_finite());
}

TEST_CASE("resolution must be a power of two >= 32") {
  CHECK_THROWS_AS((void)synth::render_sample<double>(1, variation(1), variation(2), 48),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)synth::render_sample<double>(1, variation(1), variation(2), 16),
                  std::invalid_argument);
}

TEST_CASE("changing only colors keeps the coverage mask identical") {
  auto v1 = variation(21), v2 = variation(22);
  auto id_a = synth::identity_attrs(100);
  auto id_b = id_a;
  id_b.torso_a = {0.1, 0.9, 0.1};
  id_b.torso_b = {0.9, 0.1, 0.9};
  id_b.limbs = {0.0, 0.0, 1.0};
  auto ra = synth::render_figure(id_a, v2, 64);
  auto rb = synth::render_figure(id_b, v2, 64);
  auto ta = ggb::Tensor<double>::from_data({1, 3, 64, 64}, ra);
  auto tb = ggb::Tensor<double>::from_data({1, 3, 64, 64}, rb);
  CHECK(foreground_mask(ta) == foreground_mask(tb));
  CHECK(ra != rb);
  (void)v1;
}

TEST_CASE("pose is independent of identity") {
  // Keypoint geometry is a function of the VariationSpec alone; two very
  // different identities must put foreground at every keypoint pixel.
  auto v = variation(31);
  const auto kp = synth::effective_keypoints(v);
  for (std::uint64_t seed : {1ULL, 2ULL, 900ULL}) {
    auto img = synth::render_figure(synth::identity_attrs(seed), v, 64);
    auto t = ggb::Tensor<double>::from_data({1, 3, 64, 64}, img);
    auto mask = foreground_mask(t);
    for (const auto& p : kp) {
      const int x = std::min(63, static_cast<int>(p.x * 64));
      const int y = std::min(63, static_cast<int>(p.y * 64));
      CHECK(mask[static_cast<std::size_t>(y) * 64 + x]);
    }
  }
}

TEST_CASE("label map peaks at keypoint pixels and superposes") {
  const long plane = 64 * 64;

  // single centered keypoint: argmax at center with value 1.0
  synth::VariationSpec one;
  one.keypoints = {{0.5, 0.5}};
  auto m1 = synth::encode_label_map<double>(one, 64);
  long best = 0;
  for (long i = 0; i < plane; ++i)
    if (m1.data()[i] > m1.data()[best]) best = i;
  CHECK(best == 32 * 64 + 32);
  CHECK(m1.data()[best] == doctest::Approx(1.0).epsilon(1e-12));

  // empty keypoint list: all-zero map
  synth::VariationSpec empty;
  auto m0 = synth::encode_label_map<double>(empty, 64);
  for (auto v : m0.vec()) CHECK(v == 0.0);

  // superposition: a two-keypoint map is the sum of the single-keypoint maps
  synth::VariationSpec far;
  far.keypoints = {{0.9, 0.9}};
  synth::VariationSpec both;
  both.keypoints = {{0.5, 0.5}, {0.9, 0.9}};
  auto mf = synth::encode_label_map<double>(far, 64);
  auto mb = synth::encode_label_map<double>(both, 64);
  // keypoint 1 lands on channel 1, so compare against the shifted planes
  for (long i = 0; i < plane; ++i) {
    CHECK(mb.data()[i] == doctest::Approx(m1.data()[i]).epsilon(1e-10));                  // ch 0
    CHECK(mb.data()[plane + i] == doctest::Approx(mf.data()[i]).epsilon(1e-10));          // ch 1
    CHECK(mb.data()[2 * plane + i] == 0.0);                                               // ch 2
  }

  // summed channel content matches the superposed singles
  double total_b = 0, total_1 = 0, total_f = 0;
  for (long i = 0; i < mb.numel(); ++i) total_b += mb.data()[i];
  for (long i = 0; i < plane; ++i) {
    total_1 += m1.data()[i];
    total_f += mf.data()[i];
  }
  CHECK(total_b == doctest::Approx(total_1 + total_f).epsilon(1e-10));
}

TEST_CASE("pyramid geometry and composition") {
  auto pair = synth::render_sample<double>(3, variation(8), variation(9), 64);
  auto pyr = synth::build_pyramid(pair, 6);
  for (int n = 1; n <= 6; ++n) {
    CHECK(pyr.x(n).dim(2) == (1 << n));
    CHECK(pyr.y(n).dim(3) == (1 << n));
  }
  // level n is exactly downsample(level N, 2^(N-n))
  for (int n = 1; n <= 5; ++n) {
    auto direct = ggb::downsample(pair.y, 1 << (6 - n));
    CHECK(direct.vec() == pyr.y(n).vec());
  }
  // constant image keeps its value at every level
  auto flat = synth::SamplePair<double>{};
  flat.x = Tensor<double>::full({1, 3, 64, 64}, 0.25);
  flat.y = flat.x;
  auto fp = synth::build_pyramid(flat, 6);
  for (int n = 1; n <= 6; ++n)
    for (auto v : fp.x(n).vec()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  // pyramid of a coarser level equals the tail of the original pyramid
  auto sub = synth::SamplePair<double>{};
  sub.x = pyr.x(4);
  sub.y = pyr.y(4);
  auto subpyr = synth::build_pyramid(sub, 4);
  for (int n = 1; n <= 4; ++n) {
    for (long i = 0; i < subpyr.x(n).numel(); ++i)
      CHECK(subpyr.x(n).data()[i] == doctest::Approx(pyr.x(n).data()[i]).epsilon(1e-10));
  }

  synth::SamplePair<double> bad;
  bad.x = Tensor<double>::zeros({1, 3, 32, 32});
  bad.y = bad.x;
  CHECK_THROWS_AS((void)synth::build_pyramid(bad, 7), ggb::ShapeError);
}

TEST_CASE("dataset batches are deterministic and resumable") {
  synth::DatasetConfig cfg;
  cfg.resolution = 32;
  cfg.size = 24;
  cfg.seed = 9;
  auto ds = synth::SyntheticDataset::generate(cfg);
  auto ds2 = synth::SyntheticDataset::generate(cfg);
  for (int i = 0; i < ds.size(); ++i) {
    CHECK(ds.record(i).x_bytes == ds2.record(i).x_bytes);
    CHECK(ds.record(i).identity_seed == ds2.record(i).identity_seed);
  }
  auto i0 = ds.indices_for_step(5, 8);
  auto i1 = ds2.indices_for_step(5, 8);
  CHECK(i0 == i1);
  CHECK(static_cast<int>(i0.size()) == 8);
  // one epoch covers every sample exactly once
  std::vector<int> seen(static_cast<std::size_t>(ds.size()), 0);
  for (long s = 0; s < 3; ++s)
    for (int ix : ds.indices_for_step(s, 8)) seen[static_cast<std::size_t>(ix)] += 1;
  for (int c : seen) CHECK(c == 1);

  auto b = ds.batch<float>(i0);
  CHECK(b.x.shape() == ggb::Shape{8, 3, 32, 32});
  CHECK(b.content_hash == ds2.batch<float>(i1).content_hash);
}

TEST_CASE("train and test splits use disjoint identity ranges") {
  synth::DatasetConfig tr;
  tr.size = 6;
  tr.resolution = 32;
  synth::DatasetConfig te = tr;
  te.test_split = true;
  auto a = synth::SyntheticDataset::generate(tr);
  auto b = synth::SyntheticDataset::generate(te);
  for (int i = 0; i < a.size(); ++i)
    for (int j = 0; j < b.size(); ++j) CHECK(a.record(i).identity_seed != b.record(j).identity_seed);
}

TEST_CASE("disk cache round-trips bit-exactly") {
  synth::DatasetConfig cfg;
  cfg.resolution = 32;
  cfg.size = 4;
  cfg.seed = 77;
  auto ds = synth::SyntheticDataset::generate(cfg);
  const std::string dir = "/tmp/ggb_cache_test";
  std::filesystem::remove_all(dir);
  ds.write_cache(dir);
  auto rd = synth::SyntheticDataset::read_cache(dir);
  REQUIRE(rd.size() == ds.size());
  CHECK(rd.resolution() == 32);
  for (int i = 0; i < ds.size(); ++i) {
    CHECK(rd.record(i).x_bytes == ds.record(i).x_bytes);
    CHECK(rd.record(i).y_bytes == ds.record(i).y_bytes);
    CHECK(rd.record(i).identity_seed == ds.record(i).identity_seed);
    CHECK(rd.record(i).target == ds.record(i).target);
  }
  std::filesystem::remove_all(dir);
}
