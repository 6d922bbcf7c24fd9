#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cachedp/model.hpp"
#include "cachedp/policies.hpp"
#include "cachedp/sim.hpp"
#include "cachedp/solver.hpp"
#include "cachedp/util.hpp"

namespace cachedp {

/// n geometrically spaced points with exact endpoints.
inline std::vector<double> log_grid(double lo, double hi, int n) {
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_grid: need 0 < lo <= hi");
  if (n < 1) throw std::invalid_argument("log_grid: need n >= 1");
  std::vector<double> out(static_cast<std::size_t>(n));
  out.front() = lo;
  if (n == 1) return out;
  const double ratio = std::log(hi / lo) / static_cast<double>(n - 1);
  for (int i = 1; i + 1 < n; ++i) out[i] = lo * std::exp(ratio * i);
  out.back() = hi;
  return out;
}

struct SweepAxis {
  std::string name;
  std::vector<double> values;
};

inline const std::vector<std::string>& axis_names() {
  static const std::vector<std::string> names = {"lambda_eff_mean", "lambda_all_mean",
                                                 "rho0_mean",       "request_prob_cn",
                                                 "num_nodes",       "caching_nodes"};
  return names;
}

/// Caching price mean assigned to nodes beyond a "caching_nodes" axis cutoff.
/// High enough that storing there never beats any alternative, so the node
/// keeps requesting and relaying but its cache is effectively absent.
inline constexpr double kUncachedPriceMean = 1e9;

/// Applies one axis setting to a model. num_nodes resizes the per-node
/// vectors: added nodes inherit the hub's request probability and local
/// caching price mean, and get link price means equal to the cloud mean, so a
/// node-count sweep grows a symmetric system (i.i.d. demand, i.i.d. prices)
/// while leaving the hub's own problem parameters alone. caching_nodes keeps
/// the network fixed and instead marks how many nodes, counted from node 1
/// up, may use their cache: the rest get kUncachedPriceMean, which turns
/// them into pure demand points served over the hub.
inline void apply_axis(ModelConfig& model, const std::string& axis, double value) {
  if (axis == "lambda_eff_mean") {
    model.lambda_cloud_mean = value;
  } else if (axis == "lambda_all_mean") {
    model.lambda_cloud_mean = value;
    std::fill(model.lambda_in_means.begin(), model.lambda_in_means.end(), value);
    std::fill(model.lambda_out_means.begin(), model.lambda_out_means.end(), value);
  } else if (axis == "rho0_mean") {
    if (model.rho_means.empty()) throw std::invalid_argument("rho0_mean: model has no entities");
    model.rho_means[0] = value;
  } else if (axis == "request_prob_cn") {
    if (model.request_probs.empty())
      throw std::invalid_argument("request_prob_cn: model has no entities");
    model.request_probs[0] = value;
  } else if (axis == "num_nodes") {
    const double rounded = std::nearbyint(value);
    if (!(value >= 0.0) || std::abs(value - rounded) > 1e-9)
      throw std::invalid_argument("num_nodes: axis values must be nonnegative integers");
    const int m = static_cast<int>(rounded);
    model.num_nodes = m;
    model.request_probs.resize(static_cast<std::size_t>(m) + 1,
                               model.request_probs.empty() ? 0.0 : model.request_probs[0]);
    model.rho_means.resize(static_cast<std::size_t>(m) + 1,
                           model.rho_means.empty() ? 0.0 : model.rho_means[0]);
    model.lambda_in_means.resize(static_cast<std::size_t>(m), model.lambda_cloud_mean);
    model.lambda_out_means.resize(static_cast<std::size_t>(m), model.lambda_cloud_mean);
  } else if (axis == "caching_nodes") {
    const double rounded = std::nearbyint(value);
    if (!(value >= 0.0) || std::abs(value - rounded) > 1e-9)
      throw std::invalid_argument("caching_nodes: axis values must be nonnegative integers");
    const int k = static_cast<int>(rounded);
    if (k > model.num_nodes)
      throw std::invalid_argument("caching_nodes: axis value exceeds the configured node count");
    for (int m = k + 1; m <= model.num_nodes; ++m)
      model.rho_means[static_cast<std::size_t>(m)] = kUncachedPriceMean;
  } else {
    std::string known;
    for (const auto& n : axis_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("axis: unknown axis '" + axis + "' (known: " + known + ")");
  }
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"mean_discounted_cost", "cn_discounted_cost",
                                                 "first_step_cache_prob", "caching_ratio"};
  return names;
}

/// Vector-valued metrics report the hub's entry.
inline std::pair<double, double> extract_metric(const SimReport& rep, const std::string& metric) {
  if (metric == "mean_discounted_cost")
    return {rep.mean_discounted_cost, rep.discounted_cost_stderr};
  if (metric == "cn_discounted_cost")
    return {rep.mean_cn_discounted_cost, rep.cn_discounted_cost_stderr};
  if (metric == "first_step_cache_prob")
    return {rep.first_step_cache_prob.at(0), rep.first_step_cache_prob_stderr.at(0)};
  if (metric == "caching_ratio") return {rep.caching_ratio.at(0), rep.caching_ratio_stderr.at(0)};
  std::string known;
  for (const auto& n : metric_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("metric: unknown metric '" + metric + "' (known: " + known + ")");
}

struct SweepSpec {
  std::string name;
  ModelConfig model;
  SolverConfig solver;
  SimConfig sim;
  std::vector<std::string> policies;
  std::vector<std::string> metrics;
  SweepAxis axis1;
  std::optional<SweepAxis> axis2;

  void validate() const {
    if (name.empty()) throw std::invalid_argument("name: sweep needs a name");
    if (policies.empty()) throw std::invalid_argument("policies: sweep needs at least one policy");
    for (const auto& p : policies) {
      const auto& known = policy_names();
      if (std::find(known.begin(), known.end(), p) == known.end())
        throw std::invalid_argument("policies: unknown policy '" + p + "'");
    }
    if (metrics.empty()) throw std::invalid_argument("metrics: sweep needs at least one metric");
    const SimReport probe{.caching_ratio = {0.0},
                          .caching_ratio_stderr = {0.0},
                          .first_step_cache_prob = {0.0},
                          .first_step_cache_prob_stderr = {0.0}};
    for (const auto& m : metrics) extract_metric(probe, m);
    auto check_axis = [](const SweepAxis& a) {
      const auto& known = axis_names();
      if (std::find(known.begin(), known.end(), a.name) == known.end())
        throw std::invalid_argument("axis: unknown axis '" + a.name + "'");
      if (a.values.empty())
        throw std::invalid_argument("axis: '" + a.name + "' has an empty value grid");
    };
    check_axis(axis1);
    if (axis2) check_axis(*axis2);
    solver.validate();
  }
};

struct SweepRow {
  std::string experiment;
  std::string policy;
  std::string metric;
  std::string axis1;
  double axis1_value = 0.0;
  std::string axis2;  // empty when the sweep has one axis
  double axis2_value = 0.0;
  double value = 0.0;
  double stderr_value = 0.0;
  std::uint64_t config_hash = 0;
  std::uint64_t solver_seed = 0;
  std::uint64_t sim_seed = 0;
  bool solved = false;  // a value table was computed for this cell
  bool converged = true;
  double residual = 0.0;
  int iterations = 0;
  int horizon = 0;
  int trajectories = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["policy"] = policy;
    j["metric"] = metric;
    j["axis1"] = axis1;
    j["axis1_value"] = axis1_value;
    if (!axis2.empty()) {
      j["axis2"] = axis2;
      j["axis2_value"] = axis2_value;
    }
    j["value"] = value;
    j["stderr"] = stderr_value;
    j["config_hash"] = hex64(config_hash);
    j["solver_seed"] = solver_seed;
    j["sim_seed"] = sim_seed;
    j["converged"] = converged;
    j["residual"] = solved ? nlohmann::json(residual) : nlohmann::json(nullptr);
    j["iterations"] = solved ? nlohmann::json(iterations) : nlohmann::json(nullptr);
    j["horizon"] = horizon;
    j["trajectories"] = trajectories;
    return j;
  }
};

struct SweepResult {
  std::string name;
  std::vector<SweepRow> rows;
  bool all_converged = true;
};

inline constexpr const char* kSweepCsvHeader =
    "experiment,policy,metric,axis1,axis1_value,axis2,axis2_value,value,stderr,config_hash,seed";

/// Fixed-column summary; the seed column is the simulation seed. Full
/// provenance (solver seed, residuals, convergence) lives in the JSONL form.
inline std::string sweep_csv(const SweepResult& result) {
  std::string out = kSweepCsvHeader;
  out += "\n";
  for (const auto& r : result.rows) {
    out += r.experiment + "," + r.policy + "," + r.metric;
    out += "," + r.axis1 + "," + format_double(r.axis1_value);
    out += "," + r.axis2 + "," + (r.axis2.empty() ? "" : format_double(r.axis2_value));
    out += "," + format_double(r.value) + "," + format_double(r.stderr_value);
    out += "," + hex64(r.config_hash) + "," + std::to_string(r.sim_seed);
    out += "\n";
  }
  return out;
}

inline std::string sweep_jsonl(const SweepResult& result) {
  std::string out;
  for (const auto& r : result.rows) {
    out += r.to_json().dump();
    out += "\n";
  }
  return out;
}

/// Evaluates the metrics over the axis grid. Cells are independent solves and
/// rollouts; they run on the worker pool with the inner solver kept serial,
/// and rows land in grid order (axis1 outer, axis2 inner, then policy, then
/// metric) no matter how the cells were scheduled. Every cell reuses the
/// spec's seeds, so neighboring cells share their random draws where shapes
/// line up. A cell whose solve stops at the iteration cap is flagged, not
/// fatal.
inline SweepResult run_sweep(const SweepSpec& spec, unsigned threads = 1,
                             const std::function<void(std::size_t, std::size_t)>& on_cell = {}) {
  spec.validate();
  const std::vector<double> axis2_values = spec.axis2 ? spec.axis2->values : std::vector<double>{0.0};
  const std::size_t n1 = spec.axis1.values.size();
  const std::size_t n2 = axis2_values.size();
  const std::size_t num_policies = spec.policies.size();
  const std::size_t num_metrics = spec.metrics.size();

  SweepResult result;
  result.name = spec.name;
  result.rows.resize(n1 * n2 * num_policies * num_metrics);

  std::mutex progress_mutex;
  std::size_t cells_done = 0;

  parallel_chunks(n1 * n2, threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t cell = lo; cell < hi; ++cell) {
      const std::size_t i1 = cell / n2;
      const std::size_t i2 = cell % n2;

      ModelConfig model = spec.model;
      apply_axis(model, spec.axis1.name, spec.axis1.values[i1]);
      if (spec.axis2) apply_axis(model, spec.axis2->name, axis2_values[i2]);
      model.validate();
      spec.sim.validate(model);

      const BuiltPolicies built = build_policies(spec.policies, model, spec.solver, 1);
      for (std::size_t p = 0; p < num_policies; ++p) {
        const SimReport rep = simulate(model, *built.list[p], spec.sim, 1);
        for (std::size_t k = 0; k < num_metrics; ++k) {
          const auto [value, se] = extract_metric(rep, spec.metrics[k]);
          SweepRow& row = result.rows[(cell * num_policies + p) * num_metrics + k];
          row.experiment = spec.name;
          row.policy = spec.policies[p];
          row.metric = spec.metrics[k];
          row.axis1 = spec.axis1.name;
          row.axis1_value = spec.axis1.values[i1];
          if (spec.axis2) {
            row.axis2 = spec.axis2->name;
            row.axis2_value = axis2_values[i2];
          }
          row.value = value;
          row.stderr_value = se;
          row.config_hash = model.fingerprint();
          row.solver_seed = spec.solver.seed;
          row.sim_seed = spec.sim.seed;
          row.solved = built.table.has_value();
          row.converged = built.solver_converged;
          if (built.table) {
            row.residual = built.table->residual;
            row.iterations = built.table->iterations;
          }
          row.horizon = rep.horizon;
          row.trajectories = rep.trajectory_count;
        }
      }
      if (on_cell) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        on_cell(++cells_done, n1 * n2);
      }
    }
  });

  for (const auto& row : result.rows) result.all_converged = result.all_converged && row.converged;
  return result;
}

namespace detail {

inline SweepSpec hub_only_base(std::string name, double request_prob, std::uint64_t solver_seed,
                               std::uint64_t sim_seed) {
  SweepSpec spec;
  spec.name = std::move(name);
  spec.model.num_nodes = 0;
  spec.model.gamma = 0.9;
  spec.model.request_probs = {request_prob};
  spec.model.rho_means = {1.0};
  spec.model.lambda_cloud_mean = 1.0;
  spec.solver.seed = solver_seed;
  spec.sim.seed = sim_seed;
  return spec;
}

}  // namespace detail

inline const std::vector<std::string>& builtin_experiment_names() {
  static const std::vector<std::string> names = {"fig1a",      "fig1b", "fig1c_caption",
                                                 "fig1c_text", "fig1d", "fig1e",
                                                 "fig1e_pr05", "fig1e_pr20"};
  return names;
}

/// Canned parameter studies of a single hub (optionally with helper nodes)
/// under gamma 0.9 and geometric price grids.
///
/// fig1a..fig1c map the hub's slot-0 caching decision over fetch price mean
/// [1, 25] x caching price mean [5, 100] from pinned starting conditions:
/// fig1a holds the file and sees a demand, fig1b starts empty with no demand
/// (both with popularity 0.5), and the fig1c pair repeats those two starts at
/// popularity 0.05. The grid caps the fetch/caching mean ratio at 5: the
/// empty-idle caching rate depends only on that ratio (prices scale out) and
/// climbs through 20% near ratio 5 before saturating around 35%, while the
/// hold-and-keep rate is already 1 at ratio 4, so this window is where both
/// regimes of the decision map are visible at once.
/// fig1d compares dp against myopic on long-run discounted cost as the fetch
/// price mean grows over [1, 100], with the caching price mean fixed at 10.
/// The fig1e family keeps a fixed network of the hub plus four requesting
/// nodes (every entity at the same rate: popularity 0.5, or 0.05 / 0.2 in
/// the variants) and sweeps how many of those nodes may cache: 0, 1, 2, 4,
/// under a shared link price mean of 40 or 100 and caching price means of
/// 62. It tracks the hub's own discounted cost, which covers cloud fetches,
/// hub caching, and node pulls, including the upstream leg of every relay to
/// a node that cannot serve itself.
inline SweepSpec builtin_experiment(const std::string& name) {
  const std::vector<double> fetch_grid = log_grid(1.0, 25.0, 8);
  const std::vector<double> caching_grid = log_grid(5.0, 100.0, 8);

  auto first_step_map = [&](SweepSpec spec, std::uint32_t start, std::uint32_t requests) {
    spec.sim.horizon = 1;
    spec.sim.num_trajectories = 6000;
    spec.sim.initial_state = start;
    spec.sim.initial_requests = requests;
    spec.policies = {"dp"};
    spec.metrics = {"first_step_cache_prob"};
    spec.axis1 = {"lambda_eff_mean", fetch_grid};
    spec.axis2 = SweepAxis{"rho0_mean", caching_grid};
    return spec;
  };

  auto helper_count_sweep = [&](SweepSpec spec) {
    const double p = spec.model.request_probs.front();
    spec.model.num_nodes = 4;
    spec.model.request_probs.assign(5, p);
    spec.model.rho_means.assign(5, 62.0);
    spec.model.lambda_cloud_mean = 40.0;
    spec.model.lambda_in_means.assign(4, 40.0);
    spec.model.lambda_out_means.assign(4, 40.0);
    spec.sim.horizon = 0;
    spec.sim.num_trajectories = 3000;
    spec.sim.initial_state = 0;
    spec.policies = {"dp"};
    spec.metrics = {"cn_discounted_cost"};
    spec.axis1 = {"caching_nodes", {0.0, 1.0, 2.0, 4.0}};
    spec.axis2 = SweepAxis{"lambda_all_mean", {40.0, 100.0}};
    return spec;
  };

  if (name == "fig1a") return first_step_map(detail::hub_only_base("fig1a", 0.5, 11, 12), 1u, 1u);
  if (name == "fig1b") return first_step_map(detail::hub_only_base("fig1b", 0.5, 21, 22), 0u, 0u);
  if (name == "fig1c_caption")
    return first_step_map(detail::hub_only_base("fig1c_caption", 0.05, 31, 32), 0u, 0u);
  if (name == "fig1c_text")
    return first_step_map(detail::hub_only_base("fig1c_text", 0.05, 41, 42), 1u, 1u);
  if (name == "fig1d") {
    SweepSpec spec = detail::hub_only_base("fig1d", 0.5, 51, 52);
    spec.model.rho_means = {10.0};
    spec.sim.horizon = 0;
    spec.sim.num_trajectories = 4000;
    spec.sim.initial_state = 0;
    spec.policies = {"dp", "myopic"};
    spec.metrics = {"mean_discounted_cost"};
    spec.axis1 = {"lambda_eff_mean", log_grid(1.0, 100.0, 8)};
    return spec;
  }
  if (name == "fig1e") return helper_count_sweep(detail::hub_only_base("fig1e", 0.5, 61, 62));
  if (name == "fig1e_pr05")
    return helper_count_sweep(detail::hub_only_base("fig1e_pr05", 0.05, 71, 72));
  if (name == "fig1e_pr20")
    return helper_count_sweep(detail::hub_only_base("fig1e_pr20", 0.2, 81, 82));

  std::string known;
  for (const auto& n : builtin_experiment_names()) known += (known.empty() ? "" : ", ") + n;
  throw std::invalid_argument("experiment: unknown experiment '" + name + "' (known: " + known +
                              ")");
}

}  // namespace cachedp
