// Command-line entry point: dataset generation, training, evaluation,
// sample generation, the ablation grid and the self-verification suite.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "ggb/image_io.hpp"
#include "ggb/metrics.hpp"
#include "ggb/training.hpp"
#include "ggb/verify.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<int> resolution;
  std::optional<std::vector<int>> levels;  // active GGB levels
  std::optional<int> num_ggbs;
  std::optional<int> dataset_size;
  std::optional<int> batch_size;
  bool disable_rapd = false;
  bool disable_nvtd = false;
  bool disable_ggbs = false;
  bool deterministic = false;
};

void add_common_options(CLI::App* cmd, CommonFlags& f, bool with_out = true) {
  cmd->add_option("--config", f.config_path, "config file (key = value lines)");
  if (with_out) cmd->add_option("--out", f.out_dir, "output directory")->required();
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--steps", f.steps, "training steps");
  cmd->add_option("--resolution", f.resolution, "image resolution (power of two >= 32)");
  cmd->add_option("--levels", f.levels, "active GGB levels, e.g. --levels 3,4,5")->delimiter(',');
  cmd->add_option("--num-ggbs", f.num_ggbs, "attach this many GGBs on the finest pre-output levels");
  cmd->add_option("--dataset-size", f.dataset_size, "training pairs");
  cmd->add_option("--batch-size", f.batch_size, "batch size");
  cmd->add_flag("--disable-rapd", f.disable_rapd, "train GGBs without the appearance discriminator");
  cmd->add_flag("--disable-nvtd", f.disable_nvtd, "train GGBs without the variation discriminator");
  cmd->add_flag("--disable-ggbs", f.disable_ggbs, "train without any GGB");
  cmd->add_flag("--deterministic", f.deterministic, "single-threaded deterministic mode");
}

ggb::TrainConfig resolve_config(const CommonFlags& f) {
  ggb::TrainConfig cfg;
  if (!f.config_path.empty()) cfg = ggb::load_config_file(f.config_path);
  if (f.seed) cfg.seed = *f.seed;
  if (f.steps) cfg.steps = *f.steps;
  if (f.resolution) {
    cfg.resolution = *f.resolution;
    cfg.levels = 0;  // rederive from the new resolution
  }
  if (f.levels) {
    cfg.active_levels = *f.levels;
    cfg.num_ggbs = static_cast<int>(f.levels->size());
  }
  if (f.num_ggbs) {
    cfg.num_ggbs = *f.num_ggbs;
    if (!f.levels) cfg.active_levels.clear();
  }
  if (f.dataset_size) cfg.dataset_size = *f.dataset_size;
  if (f.batch_size) cfg.batch_size = *f.batch_size;
  if (f.disable_rapd) cfg.disable_rapd = true;
  if (f.disable_nvtd) cfg.disable_nvtd = true;
  if (f.disable_ggbs) {
    cfg.disable_all_ggbs = true;
    cfg.num_ggbs = 0;
    cfg.active_levels.clear();
  }
  if (f.deterministic) cfg.deterministic = true;
  cfg.finalize();
  return cfg;
}

void apply_thread_mode(const ggb::TrainConfig& cfg) {
#ifdef _OPENMP
  if (cfg.deterministic) omp_set_num_threads(1);
#endif
  (void)cfg;
}

void write_resolved_config(const ggb::TrainConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/resolved_config.txt");
  if (!os) throw std::runtime_error("cannot write resolved config in " + out_dir);
  os << cfg.to_text();
}

template <class T>
ggb::img::Image8 level_cell(const ggb::Tensor<T>& batch_img, int item, int full_res) {
  const int C = batch_img.dim(1), H = batch_img.dim(2), W = batch_img.dim(3);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> one(static_cast<std::size_t>(C) * plane);
  std::copy_n(batch_img.data() + static_cast<std::size_t>(item) * C * plane, one.size(), one.data());
  auto im = ggb::img::from_tensor(ggb::Tensor<T>::from_data({1, C, H, W}, std::move(one)));
  return ggb::img::upscale_nearest(im, full_res / W);
}

// rows: one sample each; columns: x | x-hat at every level | y
template <class T>
void write_sample_grid(ggb::TrainState<T>& st, const ggb::synth::SyntheticDataset& data,
                       const std::string& path, int rows) {
  const int n = std::min(rows, data.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  auto batch = data.batch<T>(idx);
  auto trace = st.gen.generate(batch.x, batch.label_map);
  std::vector<ggb::img::Image8> cells;
  const int R = st.cfg.resolution;
  for (int b = 0; b < n; ++b) {
    cells.push_back(level_cell(batch.x, b, R));
    for (int lv = 1; lv <= st.cfg.levels; ++lv) cells.push_back(level_cell(trace.image(lv), b, R));
    cells.push_back(level_cell(batch.y, b, R));
  }
  ggb::img::write_png(path, ggb::img::grid(cells, st.cfg.levels + 2, 2));
}

template <class T>
int run_train(const ggb::TrainConfig& cfg, const std::string& out_dir) {
  auto data = ggb::synth::SyntheticDataset::generate(
      {cfg.resolution, cfg.dataset_size, cfg.seed, false});
  auto st = ggb::TrainState<T>::init(cfg);
  ggb::TrainLoopOptions opt;
  opt.out_dir = out_dir;
  opt.on_checkpoint = [&](long step) {
    write_sample_grid(st, data, out_dir + "/samples_step" + std::to_string(step) + ".png", 4);
  };
  long done = 0;
  opt.on_step = [&](const ggb::StepReport& r) {
    ++done;
    if (r.step % 50 == 0 || r.step + 1 == cfg.steps)
      std::printf("step %ld  L_D %.4f  l_rec_N %.4f  L_G %.4f%s\n", r.step, r.loss_d,
                  r.loss_rec_final, r.loss_g,
                  r.loss_ggb ? ("  L_GGB " + ggb::format_double(*r.loss_ggb)).c_str() : "");
  };
  (void)ggb::train_loop(st, data, opt);
  write_sample_grid(st, data, out_dir + "/samples_final.png", 4);
  std::printf("trained %ld steps; outputs in %s\n", done, out_dir.c_str());
  return 0;
}

template <class T>
std::pair<double, double> eval_run_dir(const std::string& run_dir, int test_size, int splits,
                                       const std::string& out_dir) {
  ggb::TrainConfig cfg = ggb::load_config_file(run_dir + "/resolved_config.txt");
  cfg.finalize();
  apply_thread_mode(cfg);
  auto st = ggb::TrainState<T>::init(cfg);
  ggb::load_checkpoint(st, run_dir + "/checkpoint.bin");
  auto test = ggb::synth::SyntheticDataset::generate(
      {cfg.resolution, test_size > 0 ? test_size : cfg.test_size, cfg.seed, true});
  auto train_set = ggb::synth::SyntheticDataset::generate(
      {cfg.resolution, std::min(cfg.dataset_size, 512), cfg.seed, false});
  auto clf = ggb::train_proxy_classifier<T>(train_set, cfg.seed);
  auto generate = [&](const typename ggb::synth::SyntheticDataset::Batch<T>& b) {
    return st.gen.generate(b.x, b.label_map).final;
  };
  fs::create_directories(out_dir);
  auto rep = ggb::evaluate<T>(generate, test, clf, splits, out_dir + "/ssim.csv");
  std::ofstream os(out_dir + "/report.txt");
  os << rep.to_text();
  std::cout << rep.to_text();
  return {rep.mean_ssim, rep.proxy_is_mean};
}

struct AblationRow {
  std::string label;
  std::vector<double> ssim_by_seed;
  std::vector<double> is_by_seed;
  double mean_ssim = 0, mean_is = 0;
};

// The six-variant grid; every variant of one repetition shares the seed and
// therefore the data sequence.
template <class T>
int run_ablate(ggb::TrainConfig base, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds, int test_size, int splits) {
  struct Variant {
    std::string label;
    std::function<void(ggb::TrainConfig&)> tweak;
  };
  const int N = base.levels;
  const std::vector<Variant> variants = {
      {"Ours w/o GGBs", [](ggb::TrainConfig& c) {
         c.disable_all_ggbs = true;
         c.num_ggbs = 0;
         c.active_levels.clear();
       }},
      {"Ours w/o RAPD", [](ggb::TrainConfig& c) { c.disable_rapd = true; }},
      {"Ours w/o NVTD", [](ggb::TrainConfig& c) { c.disable_nvtd = true; }},
      {"Ours with 1 GGB", [N](ggb::TrainConfig& c) {
         c.num_ggbs = 1;
         c.active_levels = {N - 1};
       }},
      {"Ours with 2 GGBs", [N](ggb::TrainConfig& c) {
         c.num_ggbs = 2;
         c.active_levels = {N - 2, N - 1};
       }},
      {"Ours", [](ggb::TrainConfig&) {}},
  };

  fs::create_directories(out_dir);
  std::vector<AblationRow> rows(variants.size());
  std::string failed;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    // per-seed classifier + test split, shared across all six variants
    ggb::TrainConfig probe = base;
    probe.seed = seeds[si];
    probe.finalize();
    auto train_set = ggb::synth::SyntheticDataset::generate(
        {probe.resolution, probe.dataset_size, probe.seed, false});
    auto test = ggb::synth::SyntheticDataset::generate(
        {probe.resolution, test_size, probe.seed, true});
    auto clf = ggb::train_proxy_classifier<T>(train_set, probe.seed);

    std::string reference_hashes;
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      ggb::TrainConfig cfg = base;
      cfg.seed = seeds[si];
      cfg.active_levels.clear();
      variants[vi].tweak(cfg);
      cfg.finalize();
      const std::string run_dir =
          out_dir + "/seed" + std::to_string(seeds[si]) + "_v" + std::to_string(vi);
      try {
        write_resolved_config(cfg, run_dir);
        auto st = ggb::TrainState<T>::init(cfg);
        ggb::TrainLoopOptions opt;
        opt.out_dir = run_dir;
        opt.write_batch_hashes = true;
        (void)ggb::train_loop(st, train_set, opt);

        std::ifstream hf(run_dir + "/batch_hashes.txt");
        std::string hashes((std::istreambuf_iterator<char>(hf)), std::istreambuf_iterator<char>());
        if (vi == 0) reference_hashes = hashes;
        else if (hashes != reference_hashes)
          throw std::runtime_error("data sequence diverged from the seed's reference run");

        auto generate = [&](const typename ggb::synth::SyntheticDataset::Batch<T>& b) {
          return st.gen.generate(b.x, b.label_map).final;
        };
        auto rep = ggb::evaluate<T>(generate, test, clf, splits, run_dir + "/ssim.csv");
        rows[vi].label = variants[vi].label;
        rows[vi].ssim_by_seed.push_back(rep.mean_ssim);
        rows[vi].is_by_seed.push_back(rep.proxy_is_mean);
        std::printf("seed %llu  %-18s ssim %.4f  proxy-IS %.3f\n",
                    static_cast<unsigned long long>(seeds[si]), variants[vi].label.c_str(),
                    rep.mean_ssim, rep.proxy_is_mean);
      } catch (const std::exception& e) {
        failed += variants[vi].label + " (seed " + std::to_string(seeds[si]) + "): " + e.what() + "\n";
      }
    }
  }
  if (!failed.empty()) {
    std::fprintf(stderr, "ablation variants failed:\n%s", failed.c_str());
    return 1;
  }

  std::ostringstream table;
  table << "variant,mean_ssim,mean_proxy_is";
  for (std::size_t si = 0; si < seeds.size(); ++si)
    table << ",ssim_seed" << seeds[si] << ",proxy_is_seed" << seeds[si];
  table << "\n";
  for (auto& r : rows) {
    r.mean_ssim = std::accumulate(r.ssim_by_seed.begin(), r.ssim_by_seed.end(), 0.0) /
                  static_cast<double>(r.ssim_by_seed.size());
    r.mean_is = std::accumulate(r.is_by_seed.begin(), r.is_by_seed.end(), 0.0) /
                static_cast<double>(r.is_by_seed.size());
    table << r.label << "," << ggb::format_double(r.mean_ssim) << ","
          << ggb::format_double(r.mean_is);
    for (std::size_t si = 0; si < seeds.size(); ++si)
      table << "," << ggb::format_double(r.ssim_by_seed[si]) << ","
            << ggb::format_double(r.is_by_seed[si]);
    table << "\n";
  }
  std::ofstream os(out_dir + "/ablation_table.csv");
  os << table.str();
  std::cout << "\n" << table.str();
  std::printf("batch hashes identical across all six variants of each seed\n");
  return 0;
}

template <class T>
int run_generate(const std::string& run_dir, const std::string& out_dir, int count) {
  ggb::TrainConfig cfg = ggb::load_config_file(run_dir + "/resolved_config.txt");
  cfg.finalize();
  apply_thread_mode(cfg);
  auto st = ggb::TrainState<T>::init(cfg);
  ggb::load_checkpoint(st, run_dir + "/checkpoint.bin");
  auto test = ggb::synth::SyntheticDataset::generate(
      {cfg.resolution, std::max(count, 1), cfg.seed, true});
  fs::create_directories(out_dir);
  write_sample_grid(st, test, out_dir + "/generated.png", count);
  std::printf("wrote %s/generated.png\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guided multi-level adversarial image synthesis"};
  app.require_subcommand(1);

  CommonFlags train_f, ablate_f, gen_data_f;
  std::string eval_run, eval_out, gen_run, gen_out;
  int eval_test_size = 0, eval_splits = 4, gen_count = 4, gen_data_count = 256;
  bool gen_data_test_split = false;
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};

  auto* c_gen_data = app.add_subcommand("gen-data", "render a dataset cache to disk");
  add_common_options(c_gen_data, gen_data_f);
  c_gen_data->add_option("--count", gen_data_count, "number of sample pairs");
  c_gen_data->add_flag("--test-split", gen_data_test_split, "use held-out identity range");

  auto* c_train = app.add_subcommand("train", "train a model");
  add_common_options(c_train, train_f);

  auto* c_eval = app.add_subcommand("evaluate", "score a finished run on held-out identities");
  c_eval->add_option("--run", eval_run, "run directory (resolved_config.txt + checkpoint.bin)")
      ->required();
  c_eval->add_option("--out", eval_out, "output directory (defaults to the run directory)");
  c_eval->add_option("--test-size", eval_test_size, "held-out pairs (default from config)");
  c_eval->add_option("--splits", eval_splits, "proxy-IS splits");

  auto* c_generate = app.add_subcommand("generate", "write sample grids from a checkpoint");
  c_generate->add_option("--run", gen_run, "run directory")->required();
  c_generate->add_option("--out", gen_out, "output directory")->required();
  c_generate->add_option("--count", gen_count, "rows in the grid");

  auto* c_ablate = app.add_subcommand("ablate", "six-variant ablation grid");
  add_common_options(c_ablate, ablate_f);
  c_ablate->add_option("--seeds", ablate_seeds, "repetition seeds")->delimiter(',');
  c_ablate->add_option("--test-size", eval_test_size, "held-out pairs per evaluation");
  c_ablate->add_option("--splits", eval_splits, "proxy-IS splits");

  auto* c_verify = app.add_subcommand("verify", "run the full oracle suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(c_gen_data)) {
      ggb::TrainConfig cfg = resolve_config(gen_data_f);
      apply_thread_mode(cfg);
      write_resolved_config(cfg, gen_data_f.out_dir);
      auto ds = ggb::synth::SyntheticDataset::generate(
          {cfg.resolution, gen_data_count, cfg.seed, gen_data_test_split});
      ds.write_cache(gen_data_f.out_dir + "/cache");
      std::printf("wrote %d pairs to %s/cache\n", ds.size(), gen_data_f.out_dir.c_str());
      return 0;
    }
    if (app.got_subcommand(c_train)) {
      ggb::TrainConfig cfg = resolve_config(train_f);
      apply_thread_mode(cfg);
      write_resolved_config(cfg, train_f.out_dir);
      return cfg.precision == "float64" ? run_train<double>(cfg, train_f.out_dir)
                                        : run_train<float>(cfg, train_f.out_dir);
    }
    if (app.got_subcommand(c_eval)) {
      if (eval_out.empty()) eval_out = eval_run;
      ggb::TrainConfig cfg = ggb::load_config_file(eval_run + "/resolved_config.txt");
      if (cfg.precision == "float64")
        (void)eval_run_dir<double>(eval_run, eval_test_size, eval_splits, eval_out);
      else
        (void)eval_run_dir<float>(eval_run, eval_test_size, eval_splits, eval_out);
      return 0;
    }
    if (app.got_subcommand(c_generate)) {
      ggb::TrainConfig cfg = ggb::load_config_file(gen_run + "/resolved_config.txt");
      return cfg.precision == "float64" ? run_generate<double>(gen_run, gen_out, gen_count)
                                        : run_generate<float>(gen_run, gen_out, gen_count);
    }
    if (app.got_subcommand(c_ablate)) {
      ggb::TrainConfig cfg = resolve_config(ablate_f);
      apply_thread_mode(cfg);
      write_resolved_config(cfg, ablate_f.out_dir);
      const int ts = eval_test_size > 0 ? eval_test_size : cfg.test_size;
      return cfg.precision == "float64"
                 ? run_ablate<double>(cfg, ablate_f.out_dir, ablate_seeds, ts, eval_splits)
                 : run_ablate<float>(cfg, ablate_f.out_dir, ablate_seeds, ts, eval_splits);
    }
    if (app.got_subcommand(c_verify)) {
      bool all = true;
      for (const auto& r : ggb::verify::run_all()) {
        std::printf("[%s] %-28s %6.2fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                    r.detail.c_str());
        all = all && r.pass;
      }
      return all ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
