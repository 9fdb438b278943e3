#pragma once

// Release-gate oracle suite: gradient checks for every primitive and every
// training objective, exact loss identities, the SSIM reference oracle,
// the staged-update contract, and a fault-injection self-test proving the
// gradient oracle would catch a broken pullback.

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "ggb/gradcheck.hpp"
#include "ggb/metrics.hpp"
#include "ggb/training.hpp"

namespace ggb::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline CheckResult timed(const std::string& name,
                         const std::function<std::pair<bool, std::string>()>& body) {
  CheckResult r;
  r.name = name;
  const auto t0 = Clock::now();
  try {
    auto [pass, detail_msg] = body();
    r.pass = pass;
    r.detail = detail_msg;
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

inline std::string rel_str(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

}  // namespace detail

// Central finite differences on every primitive op, 10 seeds each,
// strict per-coordinate tolerance 1e-6 at h=1e-5.
inline CheckResult check_primitive_gradients() {
  return detail::timed("gradient-primitives", []() -> std::pair<bool, std::string> {
    double worst = 0;
    long coords = 0;
    const double h = 1e-5, tol = 1e-6;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      SplitMix64 rng(seed);
      auto track = [&](const GradCheckResult& r) {
        worst = std::max(worst, r.max_rel_err);
        coords += r.checked;
      };
      {
        auto x = random_leaf({1, 2, 5, 5}, rng), w = random_leaf({3, 2, 3, 3}, rng),
             b = random_leaf({3}, rng);
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              auto y = conv2d(in[0], in[1], in[2], 2, 1);
              return mean(mul(y, y));
            },
            {x, w, b}, h));
      }
      {
        auto x = random_leaf({1, 2, 3, 3}, rng), w = random_leaf({2, 3, 4, 4}, rng),
             b = random_leaf({3}, rng);
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              auto y = deconv2d(in[0], in[1], in[2], 2, 1);
              return mean(mul(y, y));
            },
            {x, w, b}, h));
      }
      for (Activation act : {Activation::LeakyRelu, Activation::Relu, Activation::Tanh,
                             Activation::Sigmoid}) {
        auto x = random_leaf({3, 5}, rng, 1.0, 0.05);
        track(gradcheck(
            [act](const std::vector<Tensor<double>>& in) {
              auto y = elementwise(act, in[0], 0.2);
              return sum(mul(y, y));
            },
            {x}, h));
      }
      {
        auto a = random_leaf({2, 6}, rng), b2 = random_leaf({2, 6}, rng);
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) { return l1_distance(in[0], in[1]); }, {a, b2},
            h));
        track(gradcheck([](const std::vector<Tensor<double>>& in) { return mean(mul(in[0], in[0])); },
                        {a}, h));
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) { return sum(mul(in[0], in[1])); }, {a, b2}, h));
      }
      {
        auto x = random_leaf({1, 2, 4, 4}, rng);
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              auto y = downsample(in[0], 2);
              return sum(mul(y, y));
            },
            {x}, h));
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              auto y = global_avg_pool(in[0]);
              return sum(mul(y, y));
            },
            {x}, h));
      }
      {
        auto a = random_leaf({1, 2, 3, 3}, rng), b2 = random_leaf({1, 1, 3, 3}, rng);
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              auto y = concat_channels(in[0], in[1]);
              return mean(mul(y, y));
            },
            {a, b2}, h));
      }
      {
        auto x = random_leaf({2, 5}, rng);
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              return cross_entropy_logits(in[0], {1, 3});
            },
            {x}, h));
        track(gradcheck(
            [](const std::vector<Tensor<double>>& in) {
              return mean(log_op(clamp(sigmoid(in[0]), 1e-7, 1.0 - 1e-7)));
            },
            {x}, h));
      }
    }
    return {worst < tol, "max rel err " + detail::rel_str(worst) + " over " +
                             std::to_string(coords) + " coordinates (tol 1e-6)"};
  });
}

// Finite differences through the real architectures for every training
// objective, 10 seeds, gradient-scale-relative tolerance 1e-3.
inline CheckResult check_composite_gradients() {
  return detail::timed("gradient-composite-losses", []() -> std::pair<bool, std::string> {
    double worst = 0;
    long coords = 0;
    const double h = 1e-5, tol = 1e-3;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      GeneratorConfig gcfg;
      gcfg.resolution = 32;
      gcfg.levels = 5;
      gcfg.base_channels = 2;
      gcfg.channel_cap = 4;
      const int L = 3;
      auto gen = Generator<double>::init(gcfg, seed);
      auto block = GuidingBlock<double>::init(L, 3, 2, 4, seed + 50);
      auto disc = GlobalDiscriminator<double>::init(3, 2, 4, seed + 100);
      SplitMix64 rng(seed + 7);
      std::vector<Param<double>*> params = gen.parameters();
      for (auto* p : block.parameters()) params.push_back(p);
      for (auto* p : disc.parameters()) params.push_back(p);
      reinit_for_gradcheck(params, rng);

      auto x = Tensor<double>::randn({2, 3, 32, 32}, rng, 0.5);
      auto mc = Tensor<double>::randn({2, 3, 32, 32}, rng, 0.5);
      auto y = Tensor<double>::randn({2, 3, 32, 32}, rng, 0.5);
      auto y_l = downsample(y, 1 << (gcfg.levels - L));
      auto x_l = downsample(x, 1 << (gcfg.levels - L));
      auto w = LossWeights<double>::defaults({L});

      std::vector<Tensor<double>> leaves;
      for (auto* p : params)
        leaves.push_back(p->value.numel() <= 24
                             ? Tensor<double>::from_data(p->value.shape(), p->value.vec(), true)
                             : p->value.detach());
      auto rebuild = [&](const std::vector<Tensor<double>>& in) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = in[i];
      };
      auto track = [&](const GradCheckResult& r) {
        worst = std::max(worst, r.max_rel_err);
        coords += r.checked;
      };
      using F = std::function<Tensor<double>()>;
      const std::vector<F> losses = {
          // global discriminator objective and realism loss
          [&] { return loss_discriminator(disc.score(y), disc.score(gen.generate(x, mc).final)); },
          [&] { return loss_realism(disc.score(gen.generate(x, mc).final)); },
          // per-level reconstruction
          [&] { return loss_rec_level(y_l, gen.generate(x, mc).image(L)); },
          // generator total
          [&] {
            auto t = gen.generate(x, mc);
            return loss_generator_total(loss_realism(disc.score(t.final)),
                                        loss_rec_level(y, t.final), w);
          },
          // guiding-block discriminator objectives
          [&] {
            auto t = gen.generate(x, mc);
            return loss_rapd_discriminator(block.rapd_score(block.encode(y_l)),
                                           block.rapd_score(block.encode(t.image(L))));
          },
          [&] {
            auto t = gen.generate(x, mc);
            return loss_nvtd_discriminator(
                block.nvtd_score(block.residual(x_l, y_l)),
                block.nvtd_score(block.residual(x_l, t.image(L))));
          },
          // guiding-block fooling objectives
          [&] { return loss_rapd_generator(block.rapd_score(block.encode(gen.generate(x, mc).image(L)))); },
          [&] {
            return loss_nvtd_generator(
                block.nvtd_score(block.residual(x_l, gen.generate(x, mc).image(L))));
          },
          // full guiding total
          [&] {
            auto t = gen.generate(x, mc);
            std::map<int, GgbLevelLosses<double>> lv;
            lv[L] = {loss_rapd_generator(block.rapd_score(block.encode(t.image(L)))),
                     loss_nvtd_generator(block.nvtd_score(block.residual(x_l, t.image(L)))),
                     loss_rec_level(y_l, t.image(L))};
            return loss_ggb_total(lv, w);
          },
      };
      for (const auto& fn : losses) {
        track(gradcheck(
            [&](const std::vector<Tensor<double>>& in) {
              rebuild(in);
              return fn();
            },
            leaves, h, /*scaled=*/true));
        rebuild(leaves);
      }
    }
    return {worst < tol, "max rel err " + detail::rel_str(worst) + " over " +
                             std::to_string(coords) + " coordinates (tol 1e-3)"};
  });
}

// Exact values: 2 ln 2 / ln 2 at score one-half, zero self-reconstruction,
// and the weighted totals against plain scalar arithmetic.
inline CheckResult check_loss_identities() {
  return detail::timed("loss-identities", []() -> std::pair<bool, std::string> {
    const double ln2 = std::log(2.0);
    auto half = Tensor<double>::from_data({2, 1}, {0.5, 0.5});
    bool ok = true;
    std::string why;
    auto expect = [&](double got, double want, double tol, const char* what) {
      if (std::fabs(got - want) > tol) {
        ok = false;
        why += std::string(what) + " got " + detail::rel_str(got) + " want " + detail::rel_str(want) +
               "; ";
      }
    };
    expect(loss_discriminator(half, half).value(), 2 * ln2, 1e-6, "L_D@0.5");
    expect(loss_rapd_discriminator(half, half).value(), 2 * ln2, 1e-6, "L_RAPD@0.5");
    expect(loss_nvtd_discriminator(half, half).value(), 2 * ln2, 1e-6, "L_NVTD@0.5");
    expect(loss_realism(half).value(), ln2, 1e-6, "l_real@0.5");
    expect(loss_rapd_generator(half).value(), ln2, 1e-6, "l_RAPD@0.5");
    expect(loss_nvtd_generator(half).value(), ln2, 1e-6, "l_NVTD@0.5");

    SplitMix64 rng(99);
    auto t = Tensor<double>::randn({1, 3, 8, 8}, rng);
    expect(loss_rec_level(t, t).value(), 0.0, 0.0, "l_rec(t,t)");

    auto w = LossWeights<double>::defaults({4});  // paper weights 0.02 / 0.01 / 0.01
    expect(loss_generator_total(Tensor<double>::scalar(ln2), Tensor<double>::scalar(0.3), w).value(),
           0.02 * ln2 + 0.3, 1e-10, "L_G oracle");
    std::map<int, GgbLevelLosses<double>> lv;
    lv[4] = {Tensor<double>::scalar(ln2), Tensor<double>::scalar(ln2), Tensor<double>::scalar(0.5)};
    expect(loss_ggb_total(lv, w).value(), 0.01 * ln2 + 0.01 * ln2 + 0.5, 1e-10, "L_GGB oracle");

    // one functional behind the three discriminator-form names
    auto r = Tensor<double>::from_data({1, 1}, {0.37});
    auto f = Tensor<double>::from_data({1, 1}, {0.81});
    const double a = loss_discriminator(r, f).value();
    if (loss_rapd_discriminator(r, f).value() != a || loss_nvtd_discriminator(r, f).value() != a) {
      ok = false;
      why += "discriminator-form losses diverge; ";
    }
    return {ok, ok ? "all identities hold" : why};
  });
}

// SSIM against the direct-formula reference plus the exact-value cases.
inline CheckResult check_ssim_oracle() {
  return detail::timed("ssim-oracle", []() -> std::pair<bool, std::string> {
    SplitMix64 rng(123);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> a(3 * 16 * 16), b(3 * 16 * 16);
      for (auto& v : a) v = rng.uniform();
      for (auto& v : b) v = rng.uniform();
      auto ta = Tensor<double>::from_data({1, 3, 16, 16}, a);
      auto tb = Tensor<double>::from_data({1, 3, 16, 16}, b);
      const double mine = ssim(ta, tb);
      const double ref = reference::ssim(a, b, 3, 16, 16, 11, 1.5, 0.01, 0.03, 1.0);
      worst = std::max(worst, std::fabs(mine - ref));
      const double sym = std::fabs(mine - ssim(tb, ta));
      if (sym > 1e-12) return {false, "symmetry violated by " + detail::rel_str(sym)};
    }
    std::vector<double> img(3 * 16 * 16);
    for (auto& v : img) v = rng.uniform();
    auto t = Tensor<double>::from_data({1, 3, 16, 16}, img);
    const double self_err = std::fabs(ssim(t, t) - 1.0);
    const bool ok = worst < 1e-7 && self_err < 1e-9;
    return {ok, "max |impl - reference| " + detail::rel_str(worst) + " (tol 1e-7), |ssim(x,x)-1| " +
                    detail::rel_str(self_err)};
  });
}

// One instrumented training step: update order D -> GGBs -> G-partial ->
// G-full via version stamps, final stage bit-identical across phase 4.
inline CheckResult check_staged_updates() {
  return detail::timed("staged-updates", []() -> std::pair<bool, std::string> {
    TrainConfig cfg;
    cfg.resolution = 32;
    cfg.levels = 5;
    cfg.num_ggbs = 2;
    cfg.active_levels = {3, 4};
    cfg.batch_size = 2;
    cfg.dataset_size = 4;
    cfg.base_channels = 4;
    cfg.channel_cap = 8;
    cfg.steps = 1;
    cfg.seed = 3;
    cfg.finalize();
    synth::DatasetConfig dc;
    dc.resolution = cfg.resolution;
    dc.size = cfg.dataset_size;
    dc.seed = cfg.seed;
    auto data = synth::SyntheticDataset::generate(dc);
    auto st = TrainState<double>::init(cfg);
    auto batch = data.batch<double>(data.indices_for_step(0, cfg.batch_size));

    auto part = st.gen.partition();
    bool ok = true;
    std::string why;
    std::uint64_t d_max = 0, block_max = 0, remaining_max = 0;
    std::vector<std::vector<double>> final_before_phase4;
    PhaseObserver<double> obs = [&](StepPhase phase, TrainState<double>& s) {
      auto fail = [&](const std::string& m) {
        ok = false;
        why += m + "; ";
      };
      if (phase == StepPhase::DiscriminatorUpdate) {
        for (auto* p : s.disc.parameters()) {
          if (p->version == 0) fail("D not updated in phase 2");
          d_max = std::max(d_max, p->version);
        }
        for (auto* p : s.gen.parameters())
          if (p->version != 0) fail("G touched in phase 2");
      } else if (phase == StepPhase::GgbUpdates) {
        for (auto& b : s.blocks)
          for (auto* p : b.parameters()) {
            if (p->version <= d_max) fail("GGB not updated strictly after D");
            block_max = std::max(block_max, p->version);
          }
        for (auto* p : part.final_stage) final_before_phase4.push_back(p->value.vec());
      } else if (phase == StepPhase::GeneratorGgbUpdate) {
        bool any = false;
        for (auto* p : part.remaining)
          if (p->version != 0) {
            any = true;
            if (p->version <= block_max) fail("G-partial not after GGBs");
            remaining_max = std::max(remaining_max, p->version);
          }
        if (!any) fail("G-partial updated nothing");
        std::size_t i = 0;
        for (auto* p : part.final_stage) {
          if (p->value.vec() != final_before_phase4.at(i++)) fail("final stage changed in phase 4");
          if (p->version != 0) fail("final stage version bumped in phase 4");
        }
      } else if (phase == StepPhase::GeneratorFullUpdate) {
        bool any = false;
        for (auto* p : part.final_stage)
          if (p->version > remaining_max) any = true;
        if (!any) fail("final stage not updated in phase 5");
      }
    };
    (void)train_step(st, batch, obs);
    return {ok, ok ? "phase order and final-stage freeze verified" : why};
  });
}

// The oracle must fail loudly when the conv backward is deliberately broken.
inline CheckResult check_mutation_detection() {
  return detail::timed("mutation-detection", []() -> std::pair<bool, std::string> {
    SplitMix64 rng(5);
    auto x = random_leaf({1, 2, 4, 4}, rng), w = random_leaf({2, 2, 3, 3}, rng),
         b = random_leaf({2}, rng);
    auto f = [](const std::vector<Tensor<double>>& in) {
      return mean(conv2d(in[0], in[1], in[2], 1, 1));
    };
    hooks::conv_backward_sign_flip = true;
    const bool broken_detected = !gradcheck(f, {x, w, b}, 1e-5).ok(1e-6);
    hooks::conv_backward_sign_flip = false;
    const bool healthy = gradcheck(f, {x, w, b}, 1e-5).ok(1e-6);
    return {broken_detected && healthy,
            broken_detected ? "sign-flip caught, healthy pullback passes"
                            : "sign-flip was NOT caught"};
  });
}

inline std::vector<CheckResult> run_all() {
  return {check_primitive_gradients(), check_composite_gradients(), check_loss_identities(),
          check_ssim_oracle(),         check_staged_updates(),      check_mutation_detection()};
}

}  // namespace ggb::verify
