#include "ggb/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ggb/rng.hpp"

namespace ggb {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string int_list_to_string(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("config: bad boolean value '" + s + "'");
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void TrainConfig::finalize() {
  if (resolution < 32 || (resolution & (resolution - 1)) != 0)
    throw std::invalid_argument("config: resolution must be a power of two >= 32");
  int derived = 0;
  for (int r = resolution; r > 1; r >>= 1) ++derived;
  if (levels == 0) levels = derived;
  if (levels != derived)
    throw std::invalid_argument("config: levels " + std::to_string(levels) + " != log2(resolution) " +
                                std::to_string(derived));
  if (num_ggbs < 0 || num_ggbs > levels - 2)
    throw std::invalid_argument("config: num_ggbs must be in [0, levels-2]");
  if (active_levels.empty()) {
    for (int n = levels - num_ggbs; n < levels; ++n) active_levels.push_back(n);
  }
  std::sort(active_levels.begin(), active_levels.end());
  if (static_cast<int>(active_levels.size()) != num_ggbs)
    throw std::invalid_argument("config: num_ggbs " + std::to_string(num_ggbs) +
                                " != |active_levels| " + std::to_string(active_levels.size()));
  for (int n : active_levels) {
    // lower bound 2: the block's feature encoder halves twice
    if (n < 2 || n > levels - 1)
      throw std::invalid_argument("config: active level " + std::to_string(n) +
                                  " outside [2, levels-1]");
  }
  if (precision != "float32" && precision != "float64")
    throw std::invalid_argument("config: precision must be float32 or float64");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (dataset_size < batch_size)
    throw std::invalid_argument("config: dataset_size must be >= batch_size");
  if (log_interval < 1) throw std::invalid_argument("config: log_interval must be >= 1");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "resolution = " << resolution << "\n";
  os << "levels = " << levels << "\n";
  os << "active_levels = " << int_list_to_string(active_levels) << "\n";
  os << "num_ggbs = " << num_ggbs << "\n";
  os << "batch_size = " << batch_size << "\n";
  os << "learning_rate = " << format_double(learning_rate) << "\n";
  os << "beta1 = " << format_double(beta1) << "\n";
  os << "beta2 = " << format_double(beta2) << "\n";
  os << "lambda_real = " << format_double(lambda_real) << "\n";
  os << "lambda_rapd = " << format_double(lambda_rapd) << "\n";
  os << "lambda_nvtd = " << format_double(lambda_nvtd) << "\n";
  os << "steps = " << steps << "\n";
  os << "seed = " << seed << "\n";
  os << "precision = " << precision << "\n";
  os << "disable_all_ggbs = " << (disable_all_ggbs ? "true" : "false") << "\n";
  os << "disable_rapd = " << (disable_rapd ? "true" : "false") << "\n";
  os << "disable_nvtd = " << (disable_nvtd ? "true" : "false") << "\n";
  os << "dataset_size = " << dataset_size << "\n";
  os << "test_size = " << test_size << "\n";
  os << "base_channels = " << base_channels << "\n";
  os << "channel_cap = " << channel_cap << "\n";
  os << "log_interval = " << log_interval << "\n";
  os << "checkpoint_interval = " << checkpoint_interval << "\n";
  os << "deterministic = " << (deterministic ? "true" : "false") << "\n";
  return os.str();
}

std::uint64_t TrainConfig::hash() const {
  // Everything that shapes parameters or the training trajectory; excludes
  // output cadence knobs so a run can be resumed past its original horizon.
  std::ostringstream os;
  os << resolution << "|" << levels << "|" << int_list_to_string(active_levels) << "|" << num_ggbs
     << "|" << batch_size << "|" << format_double(learning_rate) << "|" << format_double(beta1) << "|"
     << format_double(beta2) << "|" << format_double(lambda_real) << "|" << format_double(lambda_rapd)
     << "|" << format_double(lambda_nvtd) << "|" << seed << "|" << precision << "|" << disable_all_ggbs
     << "|" << disable_rapd << "|" << disable_nvtd << "|" << dataset_size << "|" << base_channels
     << "|" << channel_cap;
  const std::string s = os.str();
  return fnv1a64(s.data(), s.size());
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  cfg.levels = 0;  // let finalize derive unless the file pins it
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "resolution") cfg.resolution = std::stoi(val);
    else if (key == "levels") cfg.levels = std::stoi(val);
    else if (key == "active_levels") cfg.active_levels = parse_int_list(val);
    else if (key == "num_ggbs") cfg.num_ggbs = std::stoi(val);
    else if (key == "batch_size") cfg.batch_size = std::stoi(val);
    else if (key == "learning_rate") cfg.learning_rate = std::stod(val);
    else if (key == "beta1") cfg.beta1 = std::stod(val);
    else if (key == "beta2") cfg.beta2 = std::stod(val);
    else if (key == "lambda_real") cfg.lambda_real = std::stod(val);
    else if (key == "lambda_rapd") cfg.lambda_rapd = std::stod(val);
    else if (key == "lambda_nvtd") cfg.lambda_nvtd = std::stod(val);
    else if (key == "steps") cfg.steps = std::stol(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "precision") cfg.precision = val;
    else if (key == "disable_all_ggbs") cfg.disable_all_ggbs = parse_bool(val);
    else if (key == "disable_rapd") cfg.disable_rapd = parse_bool(val);
    else if (key == "disable_nvtd") cfg.disable_nvtd = parse_bool(val);
    else if (key == "dataset_size") cfg.dataset_size = std::stoi(val);
    else if (key == "test_size") cfg.test_size = std::stoi(val);
    else if (key == "base_channels") cfg.base_channels = std::stoi(val);
    else if (key == "channel_cap") cfg.channel_cap = std::stoi(val);
    else if (key == "log_interval") cfg.log_interval = std::stol(val);
    else if (key == "checkpoint_interval") cfg.checkpoint_interval = std::stol(val);
    else if (key == "deterministic") cfg.deterministic = parse_bool(val);
    else throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace ggb
