#pragma once

// Staged five-phase training. Each step runs one generator forward pass and
// then updates, in order: the global discriminator, every guiding block's
// discriminators (with the shared feature encoder), the generator without
// its final decoding stage against the guiding losses, and finally the full
// generator against the realism + reconstruction objective. Scores are
// recomputed after the updates that precede them, but the generator forward
// graph from phase 1 is reused throughout the step.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ggb/config.hpp"
#include "ggb/discriminators.hpp"
#include "ggb/generator.hpp"
#include "ggb/losses.hpp"
#include "ggb/synth.hpp"

namespace ggb {

struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class StepPhase {
  DiscriminatorUpdate = 2,
  GgbUpdates = 3,
  GeneratorGgbUpdate = 4,
  GeneratorFullUpdate = 5,
};

struct StepReport {
  long step = 0;
  double loss_d = 0;
  double loss_real = 0;
  double loss_rec_final = 0;
  double loss_g = 0;
  std::optional<double> loss_ggb;

  struct Level {
    int level = 0;
    std::optional<double> rapd_d, nvtd_d;  // discriminator-side (Eq. 5/6 form)
    std::optional<double> rapd_g, nvtd_g;  // generator-side fooling losses
    double rec = 0;
  };
  std::vector<Level> levels;
  std::uint64_t batch_hash = 0;
};

template <class T>
struct TrainState {
  TrainConfig cfg;
  AdamConfig adam;
  LossWeights<T> weights;
  Generator<T> gen;
  GlobalDiscriminator<T> disc;
  std::vector<GuidingBlock<T>> blocks;  // one per active level, ascending
  long step = 0;

  static TrainState init(const TrainConfig& cfg) {
    TrainState st;
    st.cfg = cfg;
    st.adam = AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8};
    st.weights = LossWeights<T>::defaults(cfg.active_levels, static_cast<T>(cfg.lambda_real),
                                          static_cast<T>(cfg.lambda_rapd),
                                          static_cast<T>(cfg.lambda_nvtd));
    GeneratorConfig gcfg;
    gcfg.resolution = cfg.resolution;
    gcfg.levels = cfg.levels;
    gcfg.base_channels = cfg.base_channels;
    gcfg.channel_cap = cfg.channel_cap;
    st.gen = Generator<T>::init(gcfg, cfg.seed);
    st.disc = GlobalDiscriminator<T>::init(3, cfg.base_channels, cfg.channel_cap, cfg.seed);
    for (int n : cfg.active_levels)
      st.blocks.push_back(GuidingBlock<T>::init(n, 3, cfg.base_channels, cfg.channel_cap, cfg.seed));
    return st;
  }

  std::vector<Param<T>*> all_params() {
    std::vector<Param<T>*> out = gen.parameters();
    for (auto* p : disc.parameters()) out.push_back(p);
    for (auto& b : blocks)
      for (auto* p : b.parameters()) out.push_back(p);
    return out;
  }
};

template <class T>
using PhaseObserver = std::function<void(StepPhase, TrainState<T>&)>;

namespace detail {

template <class T>
double finite_loss(const Tensor<T>& loss, const char* name, long step) {
  const double v = static_cast<double>(loss.value());
  if (!std::isfinite(v))
    throw TrainingError("non-finite " + std::string(name) + " at step " + std::to_string(step) +
                        ": " + std::to_string(v));
  return v;
}

}  // namespace detail

// One staged update over a batch. Phase order and parameter masking follow
// the schedule documented at the top of this header.
template <class T>
StepReport train_step(TrainState<T>& st, const typename synth::SyntheticDataset::Batch<T>& batch,
                      const std::type_identity_t<PhaseObserver<T>>& observer = {}) {
  if (batch.x.dim(0) < 1) throw TrainingError("empty batch");
  StepReport report;
  report.step = st.step;
  report.batch_hash = batch.content_hash;

  GradTape<T> tape;
  typename GradTape<T>::Scope scope(tape);

  // (1) one generator forward for the whole step
  DecodeTrace<T> trace = st.gen.generate(batch.x, batch.label_map);

  // level images of the condition/target pair, shared by phases 3 and 4
  std::map<int, Tensor<T>> x_level, y_level;
  for (int n : st.cfg.active_levels) {
    const int factor = 1 << (st.cfg.levels - n);
    x_level[n] = downsample(batch.x, factor);
    y_level[n] = downsample(batch.y, factor);
  }

  // (2) global discriminator against the detached fake
  {
    Tensor<T> s_real = st.disc.score(batch.y);
    Tensor<T> s_fake = st.disc.score(trace.final.detach());
    Tensor<T> l_d = loss_discriminator(s_real, s_fake);
    report.loss_d = detail::finite_loss(l_d, "L_D", st.step);
    GradMap<T> grads = tape.backward(l_d);
    auto dp = st.disc.parameters();
    apply_updates(dp, grads, st.adam);
  }
  if (observer) observer(StepPhase::DiscriminatorUpdate, st);

  const bool ggbs_on = !st.cfg.disable_all_ggbs && !st.blocks.empty();

  // (3) guiding-block discriminators, each against detached level images
  if (ggbs_on) {
    for (auto& block : st.blocks) {
      const int n = block.level;
      StepReport::Level lvl;
      lvl.level = n;
      Tensor<T> xhat_det = trace.image(n).detach();
      EncodedFeature<T> enc_y = block.encode(y_level[n]);
      EncodedFeature<T> enc_fake = block.encode(xhat_det);
      Tensor<T> total;
      if (!st.cfg.disable_rapd) {
        Tensor<T> l = loss_rapd_discriminator(block.rapd_score(enc_y), block.rapd_score(enc_fake));
        lvl.rapd_d = detail::finite_loss(l, "L_RAPD", st.step);
        total = l;
      }
      if (!st.cfg.disable_nvtd) {
        EncodedFeature<T> enc_x = block.encode(x_level[n]);
        Tensor<T> s_real = block.nvtd_score(block.residual(enc_x, enc_y));
        Tensor<T> s_fake = block.nvtd_score(block.residual(enc_x, enc_fake));
        Tensor<T> l = loss_nvtd_discriminator(s_real, s_fake);
        lvl.nvtd_d = detail::finite_loss(l, "L_NVTD", st.step);
        total = total.valid() ? add(total, l) : l;
      }
      if (total.valid()) {
        GradMap<T> grads = tape.backward(total);
        auto bp = block.parameters();
        apply_updates(bp, grads, st.adam);
      }
      report.levels.push_back(lvl);
    }
  }
  if (observer) observer(StepPhase::GgbUpdates, st);

  // (4) generator guiding losses with the freshly updated blocks; the
  // final decoding stage is excluded from the update
  if (ggbs_on) {
    std::map<int, GgbLevelLosses<T>> per_level;
    for (std::size_t i = 0; i < st.blocks.size(); ++i) {
      auto& block = st.blocks[i];
      const int n = block.level;
      GgbLevelLosses<T> l;
      Tensor<T> xhat = trace.image(n);
      // encodings must be fresh: phase 3 just updated f
      EncodedFeature<T> enc_fake = block.encode(xhat);
      if (!st.cfg.disable_rapd) {
        l.rapd = loss_rapd_generator(block.rapd_score(enc_fake));
        report.levels[i].rapd_g = detail::finite_loss(l.rapd, "l_RAPD_g", st.step);
      }
      if (!st.cfg.disable_nvtd) {
        EncodedFeature<T> enc_x = block.encode(x_level[n]);
        l.nvtd = loss_nvtd_generator(block.nvtd_score(block.residual(enc_x, enc_fake)));
        report.levels[i].nvtd_g = detail::finite_loss(l.nvtd, "l_NVTD_g", st.step);
      }
      l.rec = loss_rec_level(y_level[n], xhat);
      report.levels[i].rec = detail::finite_loss(l.rec, "l_rec_n", st.step);
      per_level[n] = std::move(l);
    }
    Tensor<T> l_ggb = loss_ggb_total(per_level, st.weights);
    report.loss_ggb = detail::finite_loss(l_ggb, "L_GGB", st.step);
    GradMap<T> grads = tape.backward(l_ggb);
    auto part = st.gen.partition();
    apply_updates(part.remaining, grads, st.adam);
  }
  if (observer) observer(StepPhase::GeneratorGgbUpdate, st);

  // (5) full generator against realism + final reconstruction, with the
  // discriminator as updated in phase 2
  {
    Tensor<T> s_fake = st.disc.score(trace.final);
    Tensor<T> l_real = loss_realism(s_fake);
    Tensor<T> l_rec = loss_rec_level(batch.y, trace.final);
    Tensor<T> l_g = loss_generator_total(l_real, l_rec, st.weights);
    report.loss_real = detail::finite_loss(l_real, "l_real", st.step);
    report.loss_rec_final = detail::finite_loss(l_rec, "l_rec_N", st.step);
    report.loss_g = detail::finite_loss(l_g, "L_G", st.step);
    GradMap<T> grads = tape.backward(l_g);
    auto gp = st.gen.parameters();
    apply_updates(gp, grads, st.adam);
  }
  if (observer) observer(StepPhase::GeneratorFullUpdate, st);

  st.step += 1;
  return report;
}

// ---------------------------------------------------------------------------
// metrics CSV

inline std::string metrics_csv_header(const TrainConfig& cfg) {
  std::string h = "step,L_D,l_real,l_rec_N,L_G,L_GGB";
  if (!cfg.disable_all_ggbs)
    for (int n : cfg.active_levels) {
      h += ",L_RAPD_" + std::to_string(n);
      h += ",L_NVTD_" + std::to_string(n);
      h += ",l_rec_" + std::to_string(n);
    }
  return h;
}

inline std::string metrics_csv_row(const StepReport& r) {
  std::ostringstream os;
  os << r.step << "," << format_double(r.loss_d) << "," << format_double(r.loss_real) << ","
     << format_double(r.loss_rec_final) << "," << format_double(r.loss_g) << ",";
  if (r.loss_ggb) os << format_double(*r.loss_ggb);
  for (const auto& l : r.levels) {
    os << ",";
    if (l.rapd_d) os << format_double(*l.rapd_d);
    os << ",";
    if (l.nvtd_d) os << format_double(*l.nvtd_d);
    os << "," << format_double(l.rec);
  }
  return os.str();
}

struct TrainLoopOptions {
  std::string out_dir;  // empty -> no files written
  bool write_batch_hashes = false;
  std::function<void(const StepReport&)> on_step;
  std::function<void(long)> on_checkpoint;  // called after a checkpoint is written
};

template <class T>
void save_checkpoint(TrainState<T>& st, const std::string& path);

// Runs until cfg.steps, starting from st.step (resume-friendly). Returns
// the collected reports of the steps it executed.
template <class T>
std::vector<StepReport> train_loop(TrainState<T>& st, const synth::SyntheticDataset& data,
                                   const TrainLoopOptions& opt = {}) {
  namespace fs = std::filesystem;
  std::ofstream csv, hashes;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    const bool fresh = st.step == 0;
    csv.open(opt.out_dir + "/metrics.csv", fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw std::runtime_error("cannot write metrics CSV in " + opt.out_dir);
    if (fresh) csv << metrics_csv_header(st.cfg) << "\n";
    if (opt.write_batch_hashes) {
      hashes.open(opt.out_dir + "/batch_hashes.txt", fresh ? std::ios::trunc : std::ios::app);
      if (!hashes) throw std::runtime_error("cannot write batch hash log in " + opt.out_dir);
    }
  }

  std::vector<StepReport> reports;
  reports.reserve(static_cast<std::size_t>(std::max<long>(0, st.cfg.steps - st.step)));
  while (st.step < st.cfg.steps) {
    const std::vector<int> idx = data.indices_for_step(st.step, st.cfg.batch_size);
    const auto batch = data.batch<T>(idx);
    StepReport r = train_step(st, batch);
    if (csv.is_open() && (r.step + 1) % st.cfg.log_interval == 0) csv << metrics_csv_row(r) << "\n";
    if (hashes.is_open()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(r.batch_hash));
      hashes << r.step << "," << buf << "\n";
    }
    if (!opt.out_dir.empty() && st.cfg.checkpoint_interval > 0 &&
        st.step % st.cfg.checkpoint_interval == 0 && st.step < st.cfg.steps) {
      save_checkpoint(st, opt.out_dir + "/checkpoint.bin");
      if (opt.on_checkpoint) opt.on_checkpoint(st.step);
    }
    if (opt.on_step) opt.on_step(r);
    reports.push_back(std::move(r));
  }
  if (!opt.out_dir.empty()) save_checkpoint(st, opt.out_dir + "/checkpoint.bin");
  return reports;
}

}  // namespace ggb

#include "ggb/checkpoint.hpp"
