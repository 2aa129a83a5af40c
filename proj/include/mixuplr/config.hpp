#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "mixuplr/error.hpp"
#include "mixuplr/format.hpp"
#include "mixuplr/lipschitz.hpp"
#include "mixuplr/trainer.hpp"

namespace mixuplr {

// Flat `key = value` config files (a TOML subset). Values are numbers,
// booleans, "quoted strings", or [comma, separated] number lists. `#` starts
// a comment. Sections and nested tables are not supported.

using ConfigValue = std::variant<double, bool, std::string, std::vector<double>>;
using ConfigTable = std::map<std::string, ConfigValue>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline ConfigValue parse_config_value(const std::string& raw, std::size_t line_no) {
  const auto fail = [&](const std::string& why) {
    return ConfigError("config line " + std::to_string(line_no) + ": " + why);
  };
  if (raw.empty()) throw fail("missing value");
  if (raw == "true") return true;
  if (raw == "false") return false;
  if (raw.front() == '"') {
    if (raw.size() < 2 || raw.back() != '"') throw fail("unterminated string");
    return raw.substr(1, raw.size() - 2);
  }
  if (raw.front() == '[') {
    if (raw.back() != ']') throw fail("unterminated list");
    std::vector<double> values;
    const std::string body = trim(std::string_view(raw).substr(1, raw.size() - 2));
    if (body.empty()) return values;
    for (const auto& cell : split_csv_line(body)) {
      try {
        values.push_back(parse_double(trim(cell)));
      } catch (const ConfigError&) {
        throw fail("list entries must be numbers");
      }
    }
    return values;
  }
  try {
    return parse_double(raw);
  } catch (const ConfigError&) {
    throw fail("cannot parse value '" + raw + "'");
  }
}

}  // namespace detail

inline ConfigTable parse_config(std::istream& is) {
  ConfigTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string body = detail::trim(detail::strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[' && body.find('=') == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": sections are not supported");
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (table.contains(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    table[key] = detail::parse_config_value(detail::trim(std::string_view(body).substr(eq + 1)), line_no);
  }
  return table;
}

enum class DatasetKind { two_moons, circles, blobs };

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "two-moons") return DatasetKind::two_moons;
  if (s == "circles") return DatasetKind::circles;
  if (s == "blobs") return DatasetKind::blobs;
  throw DomainError("unknown dataset: " + std::string(s));
}

inline std::string_view dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::two_moons: return "two-moons";
    case DatasetKind::circles: return "circles";
    case DatasetKind::blobs: return "blobs";
  }
  return "?";
}

struct DatasetConfig {
  DatasetKind kind = DatasetKind::two_moons;
  std::size_t n = 2000;
  double noise = 0.1;
  double circle_factor = 0.5;
  std::size_t blob_centers = 3;
  std::uint64_t data_seed = 0;
  std::size_t labels = 6;
  bool balanced = true;
  double holdout_fraction = 0.2;
};

/// Training settings plus dataset, output and sweep settings for the CLI.
struct ExperimentConfig {
  TrainConfig train;
  DatasetConfig data;
  std::string out_dir = "runs/default";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> eps_list{0.007, 0.07};
  std::vector<double> zeta_list{0, 1, 2, 3};
  std::size_t audit_pairs = 100000;
  std::size_t audit_triples = 10000;
  OutputDistance audit_distance = OutputDistance::l2_logits;
  std::size_t grid_size = 200;
};

namespace detail {

class ConfigReader {
 public:
  explicit ConfigReader(const ConfigTable& t) : table_(t) {}

  template <class T>
  void read(const std::string& key, T& target) {
    const auto it = table_.find(key);
    if (it == table_.end()) return;
    used_.insert(key);
    const ConfigValue& v = it->second;
    if constexpr (std::is_same_v<T, bool>) {
      if (!std::holds_alternative<bool>(v)) throw ConfigError(key + ": expected true/false");
      target = std::get<bool>(v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!std::holds_alternative<std::string>(v)) throw ConfigError(key + ": expected a quoted string");
      target = std::get<std::string>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      target = number(key, v);
    } else if constexpr (std::is_integral_v<T>) {
      target = static_cast<T>(count(key, number(key, v)));
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      if (!std::holds_alternative<std::vector<double>>(v)) throw ConfigError(key + ": expected a [list]");
      target = std::get<std::vector<double>>(v);
    } else if constexpr (std::is_same_v<T, std::vector<std::uint64_t>>) {
      if (!std::holds_alternative<std::vector<double>>(v)) throw ConfigError(key + ": expected a [list]");
      target.clear();
      for (double d : std::get<std::vector<double>>(v)) target.push_back(static_cast<std::uint64_t>(count(key, d)));
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!std::holds_alternative<std::vector<double>>(v)) throw ConfigError(key + ": expected a [list]");
      target.clear();
      for (double d : std::get<std::vector<double>>(v)) target.push_back(static_cast<std::size_t>(count(key, d)));
    }
  }

  template <class Parse, class T>
  void read_enum(const std::string& key, T& target, Parse parse) {
    std::string s;
    read(key, s);
    if (s.empty()) return;
    try {
      target = parse(s);
    } catch (const DomainError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  void reject_unknown() const {
    for (const auto& [k, v] : table_) {
      if (!used_.contains(k)) throw ConfigError("unknown config key: " + k);
    }
  }

 private:
  static double number(const std::string& key, const ConfigValue& v) {
    if (!std::holds_alternative<double>(v)) throw ConfigError(key + ": expected a number");
    return std::get<double>(v);
  }
  static double count(const std::string& key, double d) {
    if (!(d >= 0.0) || d != std::floor(d)) throw ConfigError(key + ": expected a nonnegative integer");
    return d;
  }

  const ConfigTable& table_;
  std::set<std::string> used_;
};

}  // namespace detail

/// Builds and validates an ExperimentConfig; unknown keys are rejected.
inline ExperimentConfig experiment_config_from_table(const ConfigTable& table) {
  ExperimentConfig cfg;
  detail::ConfigReader r(table);
  auto& t = cfg.train;
  r.read_enum("mode", t.mode, parse_train_mode);
  std::vector<std::size_t> hidden{64, 64};
  r.read("hidden", hidden);
  r.read_enum("activation", t.net.activation, parse_activation);
  r.read("alpha", t.alpha);
  r.read("tau", t.tau);
  r.read("augment_copies", t.copies);
  r.read("jitter_sigma", t.augment.jitter_sigma);
  double rot_deg = 10.0;
  r.read("rotate_max_degrees", rot_deg);
  t.augment.rotate_max_radians = rot_deg * std::numbers::pi / 180.0;
  r.read("lambda_u_max", t.lambda_u_max);
  r.read("ramp_steps", t.ramp_steps);
  r.read("zeta", t.zeta);
  r.read("eps_r", t.alp.eps_r);
  r.read("xi", t.alp.xi);
  r.read("power_iters", t.alp.k_iters);
  r.read("gamma", t.alp.gamma);
  r.read_enum("output_distance", t.alp.d_y, parse_output_distance);
  bool squared = false;
  r.read("alp_squared", squared);
  t.alp.form = squared ? AlpForm::squared : AlpForm::linear;
  r.read("alp_on_mixed", t.alp_on_mixed);
  r.read("gp_target", t.gp_target);
  r.read_enum("optimizer", t.optimizer.kind, parse_optimizer);
  r.read("lr", t.optimizer.lr);
  r.read("beta1", t.optimizer.beta1);
  r.read("beta2", t.optimizer.beta2);
  r.read("adam_eps", t.optimizer.eps);
  r.read("batch_size", t.batch_size);
  r.read("total_steps", t.total_steps);
  r.read("eval_every", t.eval_every);
  r.read_enum("eval_target", t.eval_target, parse_eval_target);
  r.read("record_wall_time", t.record_wall_time);

  auto& d = cfg.data;
  r.read_enum("dataset", d.kind, parse_dataset_kind);
  r.read("n", d.n);
  r.read("noise", d.noise);
  r.read("circle_factor", d.circle_factor);
  r.read("blob_centers", d.blob_centers);
  r.read("data_seed", d.data_seed);
  r.read("labels", d.labels);
  r.read("balanced", d.balanced);
  r.read("holdout_fraction", d.holdout_fraction);

  r.read("out_dir", cfg.out_dir);
  r.read("seeds", cfg.seeds);
  r.read("eps_list", cfg.eps_list);
  r.read("zeta_list", cfg.zeta_list);
  r.read("audit_pairs", cfg.audit_pairs);
  r.read("audit_triples", cfg.audit_triples);
  r.read_enum("audit_distance", cfg.audit_distance, parse_output_distance);
  r.read("grid_size", cfg.grid_size);
  r.reject_unknown();

  const std::size_t classes = d.kind == DatasetKind::blobs ? d.blob_centers : 2;
  t.net.widths.clear();
  t.net.widths.push_back(2);
  t.net.widths.insert(t.net.widths.end(), hidden.begin(), hidden.end());
  t.net.widths.push_back(classes);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid training settings: ") + e.what());
  }
  if (d.n < 2) throw ConfigError("n must be >= 2");
  if (!(d.noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (d.labels < 1) throw ConfigError("labels must be >= 1");
  if (!(d.holdout_fraction >= 0.0 && d.holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0, 1)");
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty");
  if (cfg.grid_size < 2) throw ConfigError("grid_size must be >= 2");
  for (double e : cfg.eps_list) {
    if (!(e >= 0.0)) throw ConfigError("eps_list entries must be >= 0");
  }
  for (double z : cfg.zeta_list) {
    if (!(z >= 0.0)) throw ConfigError("zeta_list entries must be >= 0");
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  return experiment_config_from_table(parse_config(is));
}

}  // namespace mixuplr
