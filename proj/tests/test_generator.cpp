#include "doctest.h"
#include "ggb/generator.hpp"
#include "ggb/synth.hpp"

using ggb::GeneratorConfig;
using ggb::GradTape;
using ggb::Tensor;

namespace {

GeneratorConfig small_cfg() {
  GeneratorConfig cfg;
  cfg.resolution = 16;
  cfg.levels = 4;
  cfg.base_channels = 4;
  cfg.channel_cap = 8;
  return cfg;
}

}  // namespace

TEST_CASE("generate keeps geometry: output matches input, g^n doubles") {
  GeneratorConfig cfg;
  cfg.resolution = 64;
  cfg.levels = 6;
  cfg.base_channels = 4;
  cfg.channel_cap = 16;
  auto gen = ggb::Generator<float>::init(cfg, 1);
  ggb::SplitMix64 rng(2);
  auto x = Tensor<float>::randn({2, 3, 64, 64}, rng);
  auto m = Tensor<float>::randn({2, 3, 64, 64}, rng);
  auto trace = gen.generate(x, m);
  CHECK(trace.final.shape() == x.shape());
  for (int n = 1; n <= 6; ++n) {
    CHECK(trace.feature(n).dim(2) == (1 << n));
    CHECK(trace.image(n).dim(2) == (1 << n));
    CHECK(trace.image(n).dim(1) == 3);
  }
}

TEST_CASE("level images stay strictly inside (-1,1) under random params") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto gen = ggb::Generator<double>::init(small_cfg(), seed);
    ggb::SplitMix64 rng(seed + 100);
    auto x = Tensor<double>::randn({1, 3, 16, 16}, rng);
    auto m = Tensor<double>::randn({1, 3, 16, 16}, rng);
    auto trace = gen.generate(x, m);
    for (int n = 1; n <= 4; ++n)
      for (auto v : trace.image(n).vec()) {
        CHECK(v > -1.0);
        CHECK(v < 1.0);
      }
  }
}

TEST_CASE("generate is deterministic and rejects bad shapes") {
  auto gen = ggb::Generator<double>::init(small_cfg(), 3);
  ggb::SplitMix64 rng(4);
  auto x = Tensor<double>::randn({1, 3, 16, 16}, rng);
  auto m = Tensor<double>::randn({1, 3, 16, 16}, rng);
  auto a = gen.generate(x, m);
  auto b = gen.generate(x, m);
  CHECK(a.final.vec() == b.final.vec());

  CHECK_THROWS_AS((void)gen.generate(Tensor<double>::zeros({1, 3, 8, 8}), m), ggb::ShapeError);
  CHECK_THROWS_AS((void)gen.generate(x, Tensor<double>::zeros({1, 3, 8, 8})), ggb::ShapeError);
  GeneratorConfig bad = small_cfg();
  bad.resolution = 24;
  CHECK_THROWS_AS((void)ggb::Generator<double>::init(bad, 1), ggb::ShapeError);
}

TEST_CASE("partition splits exactly one deconv layer and one head off") {
  auto gen = ggb::Generator<double>::init(small_cfg(), 5);
  auto all = gen.parameters();
  auto part = gen.partition();
  CHECK(part.final_stage.size() == 4);  // deconv w+b, head w+b
  CHECK(part.final_stage.size() + part.remaining.size() == all.size());
  long total = 0, split_total = 0;
  for (auto* p : all) total += p->value.numel();
  for (auto* p : part.final_stage) split_total += p->value.numel();
  for (auto* p : part.remaining) split_total += p->value.numel();
  CHECK(total == split_total);
  for (auto* f : part.final_stage)
    for (auto* r : part.remaining) CHECK(f != r);
}

TEST_CASE("gradients flow to decoder levels <= n and not to levels > n") {
  auto cfg = small_cfg();
  auto gen = ggb::Generator<double>::init(cfg, 7);
  ggb::SplitMix64 rng(8);
  auto x = Tensor<double>::randn({1, 3, 16, 16}, rng);
  auto m = Tensor<double>::randn({1, 3, 16, 16}, rng);
  const int probe_level = 2;
  GradTape<double> tape;
  GradTape<double>::Scope scope(tape);
  auto trace = gen.generate(x, m);
  auto loss = ggb::mean(ggb::mul(trace.image(probe_level), trace.image(probe_level)));
  auto grads = tape.backward(loss);
  for (int n = 1; n <= cfg.levels; ++n) {
    bool any_nonzero = false;
    std::vector<ggb::Param<double>*> ps;
    gen.decoder[static_cast<std::size_t>(n)].collect(ps);
    for (auto* p : ps) {
      if (!grads.has(p->value)) continue;
      for (auto v : grads.grad(p->value).vec())
        if (v != 0.0) any_nonzero = true;
    }
    if (n <= probe_level)
      CHECK(any_nonzero);
    else
      CHECK(!any_nonzero);
  }
  // encoder always feeds every level
  bool enc_nonzero = false;
  std::vector<ggb::Param<double>*> eps;
  gen.encoder[1].collect(eps);
  for (auto* p : eps)
    if (grads.has(p->value))
      for (auto v : grads.grad(p->value).vec())
        if (v != 0.0) enc_nonzero = true;
  CHECK(enc_nonzero);
}

TEST_CASE("skip concatenation channel bookkeeping holds by construction") {
  auto cfg = small_cfg();
  for (int n = 2; n <= cfg.levels; ++n) {
    const int expected_in = cfg.decoder_out(n - 1) + cfg.encoder_out(cfg.levels - n + 1);
    auto gen = ggb::Generator<double>::init(cfg, 1);
    CHECK(gen.decoder[static_cast<std::size_t>(n)].weight.value.dim(0) == expected_in);
  }
}
