#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cachedp/experiments.hpp"
#include "cachedp/model.hpp"
#include "cachedp/sim.hpp"
#include "cachedp/solver.hpp"
#include "cachedp/util.hpp"

namespace cachedp {

/// Config file problem, tagged with the offending key and line (0 when the
/// problem is not tied to a line, e.g. a missing required key).
struct ConfigError : std::runtime_error {
  std::string key;
  int line;
  ConfigError(std::string key_, int line_, const std::string& what)
      : std::runtime_error(line_ > 0 ? "config line " + std::to_string(line_) + ": " + key_ +
                                           ": " + what
                                     : "config: " + key_ + ": " + what),
        key(std::move(key_)),
        line(line_) {}
};

namespace detail {

struct ConfigEntry {
  std::string value;
  int line = 0;
  bool used = false;
};

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

/// One `key = value` pair per line; `#` starts a comment; blank lines are
/// skipped; keys may not repeat.
inline std::map<std::string, ConfigEntry> parse_key_values(const std::string& text) {
  std::map<std::string, ConfigEntry> out;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line(text.data() + pos, (eol == std::string::npos ? text.size() : eol) - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(line), line_no, "expected 'key = value'");
    const std::string key{trim(line.substr(0, eq))};
    if (key.empty()) throw ConfigError("(empty)", line_no, "expected a key before '='");
    if (out.count(key)) throw ConfigError(key, line_no, "duplicate key");
    out[key] = ConfigEntry{std::string(trim(line.substr(eq + 1))), line_no, false};
  }
  return out;
}

inline double parse_double(const std::string& key, int line, std::string_view text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(key, line, "expected a number, got '" + std::string(text) + "'");
  return v;
}

template <typename Int>
inline Int parse_int(const std::string& key, int line, std::string_view text) {
  Int v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    throw ConfigError(key, line, "expected an integer, got '" + std::string(text) + "'");
  return v;
}

class ConfigReader {
 public:
  explicit ConfigReader(std::map<std::string, ConfigEntry> entries)
      : entries_(std::move(entries)) {}

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  double require_double(const std::string& key) {
    const ConfigEntry& e = require(key);
    return parse_double(key, e.line, e.value);
  }
  double get_double(const std::string& key, double fallback) {
    const ConfigEntry* e = find(key);
    return e ? parse_double(key, e->line, e->value) : fallback;
  }
  template <typename Int>
  Int require_int(const std::string& key) {
    const ConfigEntry& e = require(key);
    return parse_int<Int>(key, e.line, e.value);
  }
  template <typename Int>
  Int get_int(const std::string& key, Int fallback) {
    const ConfigEntry* e = find(key);
    return e ? parse_int<Int>(key, e->line, e->value) : fallback;
  }
  template <typename Int>
  std::optional<Int> get_optional_int(const std::string& key) {
    const ConfigEntry* e = find(key);
    if (!e) return std::nullopt;
    return parse_int<Int>(key, e->line, e->value);
  }
  std::string require_string(const std::string& key) { return require(key).value; }
  std::vector<double> require_double_list(const std::string& key) {
    return parse_list(key, require(key));
  }
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) {
    const ConfigEntry* e = find(key);
    return e ? parse_list(key, *e) : std::move(fallback);
  }
  std::vector<std::string> require_string_list(const std::string& key) {
    const ConfigEntry& e = require(key);
    std::vector<std::string> out;
    for (std::string_view rest = e.value; !rest.empty();) {
      const std::size_t comma = rest.find(',');
      const std::string_view item = trim(rest.substr(0, comma));
      if (item.empty()) throw ConfigError(key, e.line, "empty list entry");
      out.emplace_back(item);
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    return out;
  }

  /// Every key must have been consumed by now.
  void reject_unknown() const {
    const ConfigEntry* worst = nullptr;
    std::string worst_key;
    for (const auto& [key, entry] : entries_)
      if (!entry.used && (!worst || entry.line < worst->line)) {
        worst = &entry;
        worst_key = key;
      }
    if (worst) throw ConfigError(worst_key, worst->line, "unknown key");
  }

 private:
  const ConfigEntry* find(const std::string& key) {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }
  const ConfigEntry& require(const std::string& key) {
    const ConfigEntry* e = find(key);
    if (!e) throw ConfigError(key, 0, "missing required key");
    return *e;
  }
  static std::vector<double> parse_list(const std::string& key, const ConfigEntry& e) {
    std::vector<double> out;
    for (std::string_view rest = e.value; !rest.empty();) {
      const std::size_t comma = rest.find(',');
      const std::string_view item = trim(rest.substr(0, comma));
      if (item.empty()) throw ConfigError(key, e.line, "empty list entry");
      out.push_back(parse_double(key, e.line, item));
      rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    }
    if (out.empty()) throw ConfigError(key, e.line, "expected a nonempty list");
    return out;
  }

  std::map<std::string, ConfigEntry> entries_;
};

inline void read_model(ConfigReader& r, ModelConfig& model) {
  model.num_nodes = r.require_int<int>("num_nodes");
  model.gamma = r.require_double("gamma");
  model.request_probs = r.require_double_list("request_probs");
  model.rho_means = r.require_double_list("rho_means");
  model.lambda_cloud_mean = r.require_double("lambda_cloud_mean");
  if (model.num_nodes > 0) {
    model.lambda_in_means = r.require_double_list("lambda_in_means");
    model.lambda_out_means = r.require_double_list("lambda_out_means");
  } else {
    model.lambda_in_means = r.get_double_list("lambda_in_means", {});
    model.lambda_out_means = r.get_double_list("lambda_out_means", {});
  }
  model.node_limit = r.get_int<int>("node_limit", kDefaultNodeLimit);
}

inline void read_solver(ConfigReader& r, SolverConfig& solver) {
  solver.epsilon = r.get_double("epsilon", 0.0);
  solver.max_iterations = r.get_int<int>("max_iterations", 10000);
  solver.num_samples = r.get_int<int>("num_samples", 2000);
  solver.seed = r.get_int<std::uint64_t>("solver_seed", 1);
}

inline void read_sim(ConfigReader& r, SimConfig& sim) {
  sim.horizon = r.get_int<int>("horizon", 0);
  sim.num_trajectories = r.get_int<int>("num_trajectories", 4000);
  sim.initial_state = r.get_int<std::uint32_t>("initial_state", 0);
  sim.initial_requests = r.get_optional_int<std::uint32_t>("initial_requests");
  sim.seed = r.get_int<std::uint64_t>("sim_seed", 2);
}

}  // namespace detail

struct RunConfig {
  ModelConfig model;
  SolverConfig solver;
  SimConfig sim;

  void validate() const {
    model.validate();
    solver.validate();
    sim.validate(model);
  }
};

/// Flat `key = value` run description. Required keys: num_nodes, gamma,
/// request_probs, rho_means, lambda_cloud_mean, plus lambda_in_means and
/// lambda_out_means once num_nodes is positive. Everything else defaults.
inline RunConfig parse_run_config(const std::string& text) {
  detail::ConfigReader reader(detail::parse_key_values(text));
  RunConfig cfg;
  detail::read_model(reader, cfg.model);
  detail::read_solver(reader, cfg.solver);
  detail::read_sim(reader, cfg.sim);
  reader.reject_unknown();
  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

/// Run config plus sweep keys: name, policies, metrics, axis1, axis1_values,
/// and optionally axis2 with axis2_values.
inline SweepSpec parse_sweep_spec(const std::string& text) {
  detail::ConfigReader reader(detail::parse_key_values(text));
  SweepSpec spec;
  spec.name = reader.require_string("name");
  detail::read_model(reader, spec.model);
  detail::read_solver(reader, spec.solver);
  detail::read_sim(reader, spec.sim);
  spec.policies = reader.require_string_list("policies");
  spec.metrics = reader.require_string_list("metrics");
  spec.axis1.name = reader.require_string("axis1");
  spec.axis1.values = reader.require_double_list("axis1_values");
  if (reader.has("axis2") || reader.has("axis2_values")) {
    SweepAxis axis2;
    axis2.name = reader.require_string("axis2");
    axis2.values = reader.require_double_list("axis2_values");
    spec.axis2 = std::move(axis2);
  }
  reader.reject_unknown();
  spec.model.validate();
  spec.validate();
  return spec;
}

inline SweepSpec load_sweep_spec(const std::string& path) {
  return parse_sweep_spec(read_text_file(path));
}

namespace detail {

inline std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += (out.empty() ? "" : ", ") + format_double(x);
  return out;
}

}  // namespace detail

/// Canonical text form; parses back to an equivalent config.
inline std::string dump_run_config(const RunConfig& cfg) {
  std::string out;
  out += "num_nodes = " + std::to_string(cfg.model.num_nodes) + "\n";
  out += "gamma = " + format_double(cfg.model.gamma) + "\n";
  out += "request_probs = " + detail::join_doubles(cfg.model.request_probs) + "\n";
  out += "rho_means = " + detail::join_doubles(cfg.model.rho_means) + "\n";
  out += "lambda_cloud_mean = " + format_double(cfg.model.lambda_cloud_mean) + "\n";
  if (cfg.model.num_nodes > 0) {
    out += "lambda_in_means = " + detail::join_doubles(cfg.model.lambda_in_means) + "\n";
    out += "lambda_out_means = " + detail::join_doubles(cfg.model.lambda_out_means) + "\n";
  }
  out += "node_limit = " + std::to_string(cfg.model.node_limit) + "\n";
  out += "epsilon = " + format_double(cfg.solver.epsilon) + "\n";
  out += "max_iterations = " + std::to_string(cfg.solver.max_iterations) + "\n";
  out += "num_samples = " + std::to_string(cfg.solver.num_samples) + "\n";
  out += "solver_seed = " + std::to_string(cfg.solver.seed) + "\n";
  out += "horizon = " + std::to_string(cfg.sim.horizon) + "\n";
  out += "num_trajectories = " + std::to_string(cfg.sim.num_trajectories) + "\n";
  out += "initial_state = " + std::to_string(cfg.sim.initial_state) + "\n";
  if (cfg.sim.initial_requests)
    out += "initial_requests = " + std::to_string(*cfg.sim.initial_requests) + "\n";
  out += "sim_seed = " + std::to_string(cfg.sim.seed) + "\n";
  return out;
}

}  // namespace cachedp
