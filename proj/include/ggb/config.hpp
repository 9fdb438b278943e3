#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ggb {

// Full run specification. Plain-text `key = value` files map 1:1 onto the
// fields; CLI flags override individual keys. `finalize()` derives the
// defaults that depend on other fields and validates the result.
struct TrainConfig {
  int resolution = 64;
  int levels = 6;  // generator depth N; resolution must equal 2^N
  std::vector<int> active_levels;  // GGB attachment; empty -> derived from num_ggbs
  int num_ggbs = 3;

  int batch_size = 8;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double lambda_real = 0.02;
  double lambda_rapd = 0.01;
  double lambda_nvtd = 0.01;

  long steps = 500;
  std::uint64_t seed = 1;
  std::string precision = "float32";  // "float32" | "float64"

  bool disable_all_ggbs = false;
  bool disable_rapd = false;
  bool disable_nvtd = false;

  int dataset_size = 2000;
  int test_size = 128;
  int base_channels = 16;
  int channel_cap = 64;

  long log_interval = 1;
  long checkpoint_interval = 100;
  bool deterministic = false;

  void finalize();
  std::uint64_t hash() const;    // identity of the run for checkpoint matching
  std::string to_text() const;   // resolved snapshot, parseable by parse_config_text
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config_file(const std::string& path);

std::string format_double(double v);

}  // namespace ggb
