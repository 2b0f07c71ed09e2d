#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tide/model.hpp"
#include "tide/objective.hpp"

namespace tide {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double lr = 1e-3;
  long long warmup = 1000;
  long long total_steps = 50000;
  int batch = 64;
  double weight_decay = 1e-4;
  double clip = 1.0;
  uint64_t seed = 42;
  long long eval_interval = 500;
  long long checkpoint_interval = 5000;
  long long monitor_interval = 100;
  std::string out_dir = "runs/default";
};

struct DataConfig {
  std::string dataset = "mnist";
  std::string data_dir = "";  // empty: TIDE_DATA_DIR or ./data/mnist
  int train_count = 0;        // 0: full split
  int test_count = 0;
  std::vector<double> mean = {0.1307};
  std::vector<double> std_dev = {0.3081};
  std::string corruptions = "";  // comma list of kinds for cmd_eval
};

// One reproducible training job: model, loss, trainer and data settings.
// Defaults reproduce the published MNIST-class configuration.
struct RunConfig {
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  DataConfig data;

  // MNIST small-image defaults leave the spectral weight off.
  RunConfig() { loss.lambda_spec = 0.0; }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline double to_double(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

inline long long to_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (...) {
    throw ConfigError("config: bad integer value for " + key + ": '" + v + "'");
  }
}

inline std::vector<double> to_doubles(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(trim(item), key));
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

}  // namespace config_detail

// Applies one key in one section; throws ConfigError on unknown keys so that
// hyperparameter drift cannot pass silently.
inline void apply_config_key(RunConfig& c, const std::string& section, const std::string& key,
                             const std::string& value) {
  using namespace config_detail;
  const std::string where = section + "." + key;
  auto d = [&] { return to_double(value, where); };
  auto i = [&] { return to_int(value, where); };
  if (section == "model") {
    if (key == "d_model") c.model.d_model = static_cast<int>(i());
    else if (key == "rho") c.model.rho = d();
    else if (key == "t_steps") c.model.steps = static_cast<int>(i());
    else if (key == "tau_e") c.model.tau_e = d();
    else if (key == "tau_i") c.model.tau_i = d();
    else if (key == "dt") c.model.dt = d();
    else if (key == "k_wta") c.model.k_wta = static_cast<int>(i());
    else if (key == "wta_tol") c.model.wta_tol = d();
    else if (key == "gamma") c.model.gamma0 = d();
    else if (key == "n_i_lat") c.model.n_i_lat = static_cast<int>(i());
    else if (key == "d_mem") c.model.d_mem = static_cast<int>(i());
    else if (key == "d_ee") c.model.d_ee = static_cast<int>(i());
    else if (key == "d_ei") c.model.d_ei = static_cast<int>(i());
    else if (key == "d_ii") c.model.d_ii = static_cast<int>(i());
    else if (key == "p_ee") c.model.p_ee = static_cast<int>(i());
    else if (key == "p_ei") c.model.p_ei = static_cast<int>(i());
    else if (key == "p_ii") c.model.p_ii = static_cast<int>(i());
    else if (key == "n_heads") c.model.n_heads = static_cast<int>(i());
    else if (key == "d_attn") c.model.d_attn = static_cast<int>(i());
    else if (key == "backbone") c.model.backbone = value;
    else if (key == "backbone_width") c.model.backbone_width = static_cast<int>(i());
    else if (key == "head_hidden") c.model.head_hidden = static_cast<int>(i());
    else if (key == "nlm_window") c.model.nlm_window = static_cast<int>(i());
    else if (key == "nlm_hidden") c.model.nlm_hidden = static_cast<int>(i());
    else if (key == "dropout") c.model.dropout = d();
    else if (key == "sync_clamp") c.model.sync_clamp = d();
    else if (key == "classes") c.model.classes = static_cast<int>(i());
    else if (key == "in_channels") c.model.in_channels = static_cast<int>(i());
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "loss") {
    if (key == "lambda_ei") c.loss.lambda_ei = d();
    else if (key == "lambda_game") c.loss.lambda_game = d();
    else if (key == "lambda_sync") c.loss.lambda_sync = d();
    else if (key == "lambda_spec") c.loss.lambda_spec = d();
    else if (key == "tau_ee") c.loss.tau_ee = d();
    else if (key == "tau_ii") c.loss.tau_ii = d();
    else if (key == "rho_star") c.loss.rho_star = d();
    else if (key == "t_s") c.loss.t_s = i();
    else if (key == "t_w") c.loss.t_w = i();
    else if (key == "game_variant") {
      if (value == "energy") c.model.game_variant = GameLossVariant::energy;
      else if (value == "residual") c.model.game_variant = GameLossVariant::residual;
      else throw ConfigError("config: game_variant must be energy|residual");
    } else if (key == "dissipation_e") c.model.dissipation_e = d();
    else if (key == "dissipation_i") c.model.dissipation_i = d();
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "train") {
    if (key == "lr") c.train.lr = d();
    else if (key == "warmup") c.train.warmup = i();
    else if (key == "total_steps") c.train.total_steps = i();
    else if (key == "batch") c.train.batch = static_cast<int>(i());
    else if (key == "weight_decay") c.train.weight_decay = d();
    else if (key == "clip") c.train.clip = d();
    else if (key == "tbptt") c.model.tbptt_k = static_cast<int>(i());
    else if (key == "seed") {
      c.train.seed = static_cast<uint64_t>(i());
      c.model.seed = c.train.seed;
    } else if (key == "eval_interval") c.train.eval_interval = i();
    else if (key == "checkpoint_interval") c.train.checkpoint_interval = i();
    else if (key == "monitor_interval") c.train.monitor_interval = i();
    else if (key == "out_dir") c.train.out_dir = value;
    else throw ConfigError("config: unknown key " + where);
  } else if (section == "data") {
    if (key == "dataset") c.data.dataset = value;
    else if (key == "data_dir") c.data.data_dir = value;
    else if (key == "train_count") c.data.train_count = static_cast<int>(i());
    else if (key == "test_count") c.data.test_count = static_cast<int>(i());
    else if (key == "mean") c.data.mean = to_doubles(value, where);
    else if (key == "std") c.data.std_dev = to_doubles(value, where);
    else if (key == "corruptions") c.data.corruptions = value;
    else throw ConfigError("config: unknown key " + where);
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
}

inline RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = config_detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("config: malformed section at line " +
                                             std::to_string(lineno));
      section = config_detail::trim(s.substr(1, s.size() - 2));
      continue;
    }
    const size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(lineno));
    if (section.empty())
      throw ConfigError("config: key outside any section at line " + std::to_string(lineno));
    const std::string key = config_detail::trim(s.substr(0, eq));
    const std::string value = config_detail::trim(s.substr(eq + 1));
    apply_config_key(c, section, key, value);
  }
  return c;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  return parse_config(in);
}

inline RunConfig parse_config_string(const std::string& text) {
  std::stringstream ss(text);
  return parse_config(ss);
}

// Canonical dump; parsing it back reproduces the configuration.
inline std::string dump_config(const RunConfig& c) {
  std::ostringstream o;
  o.precision(17);
  o << "[model]\n";
  o << "d_model = " << c.model.d_model << "\n";
  o << "rho = " << c.model.rho << "\n";
  o << "t_steps = " << c.model.steps << "\n";
  o << "tau_e = " << c.model.tau_e << "\n";
  o << "tau_i = " << c.model.tau_i << "\n";
  o << "dt = " << c.model.dt << "\n";
  o << "k_wta = " << c.model.k_wta << "\n";
  o << "wta_tol = " << c.model.wta_tol << "\n";
  o << "gamma = " << c.model.gamma0 << "\n";
  o << "n_i_lat = " << c.model.n_i_lat << "\n";
  o << "d_mem = " << c.model.d_mem << "\n";
  o << "d_ee = " << c.model.d_ee << "\n";
  o << "d_ei = " << c.model.d_ei << "\n";
  o << "d_ii = " << c.model.d_ii << "\n";
  o << "p_ee = " << c.model.p_ee << "\n";
  o << "p_ei = " << c.model.p_ei << "\n";
  o << "p_ii = " << c.model.p_ii << "\n";
  o << "n_heads = " << c.model.n_heads << "\n";
  o << "d_attn = " << c.model.d_attn << "\n";
  o << "backbone = " << c.model.backbone << "\n";
  o << "backbone_width = " << c.model.backbone_width << "\n";
  o << "head_hidden = " << c.model.head_hidden << "\n";
  o << "nlm_window = " << c.model.nlm_window << "\n";
  o << "nlm_hidden = " << c.model.nlm_hidden << "\n";
  o << "dropout = " << c.model.dropout << "\n";
  o << "sync_clamp = " << c.model.sync_clamp << "\n";
  o << "classes = " << c.model.classes << "\n";
  o << "in_channels = " << c.model.in_channels << "\n";
  o << "\n[loss]\n";
  o << "lambda_ei = " << c.loss.lambda_ei << "\n";
  o << "lambda_game = " << c.loss.lambda_game << "\n";
  o << "lambda_sync = " << c.loss.lambda_sync << "\n";
  o << "lambda_spec = " << c.loss.lambda_spec << "\n";
  o << "tau_ee = " << c.loss.tau_ee << "\n";
  o << "tau_ii = " << c.loss.tau_ii << "\n";
  o << "rho_star = " << c.loss.rho_star << "\n";
  o << "t_s = " << c.loss.t_s << "\n";
  o << "t_w = " << c.loss.t_w << "\n";
  o << "game_variant = "
    << (c.model.game_variant == GameLossVariant::energy ? "energy" : "residual") << "\n";
  o << "dissipation_e = " << c.model.dissipation_e << "\n";
  o << "dissipation_i = " << c.model.dissipation_i << "\n";
  o << "\n[train]\n";
  o << "lr = " << c.train.lr << "\n";
  o << "warmup = " << c.train.warmup << "\n";
  o << "total_steps = " << c.train.total_steps << "\n";
  o << "batch = " << c.train.batch << "\n";
  o << "weight_decay = " << c.train.weight_decay << "\n";
  o << "clip = " << c.train.clip << "\n";
  o << "tbptt = " << c.model.tbptt_k << "\n";
  o << "seed = " << c.train.seed << "\n";
  o << "eval_interval = " << c.train.eval_interval << "\n";
  o << "checkpoint_interval = " << c.train.checkpoint_interval << "\n";
  o << "monitor_interval = " << c.train.monitor_interval << "\n";
  o << "out_dir = " << c.train.out_dir << "\n";
  o << "\n[data]\n";
  o << "dataset = " << c.data.dataset << "\n";
  o << "data_dir = " << c.data.data_dir << "\n";
  o << "train_count = " << c.data.train_count << "\n";
  o << "test_count = " << c.data.test_count << "\n";
  o << "mean = ";
  for (size_t i = 0; i < c.data.mean.size(); ++i) o << (i ? "," : "") << c.data.mean[i];
  o << "\nstd = ";
  for (size_t i = 0; i < c.data.std_dev.size(); ++i) o << (i ? "," : "") << c.data.std_dev[i];
  o << "\ncorruptions = " << c.data.corruptions << "\n";
  return o.str();
}

inline uint64_t fnv1a_hash(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx",
           static_cast<unsigned long long>(fnv1a_hash(dump_config(c))));
  return std::string(buf);
}

}  // namespace tide
