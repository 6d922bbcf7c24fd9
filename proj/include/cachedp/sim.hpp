#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cachedp/model.hpp"
#include "cachedp/policies.hpp"
#include "cachedp/sampling.hpp"
#include "cachedp/util.hpp"

namespace cachedp {

inline constexpr int kMaxHorizon = 1 << 20;  // slot stride inside one trajectory's draw space

/// Horizon at which the discarded discounted tail is below 1e-6 of a unit
/// per-slot cost.
inline int default_horizon(double gamma) {
  if (gamma <= 0.0) return 1;
  const double t = std::ceil(std::log(1e-6) / std::log(gamma));
  if (!(t >= 1.0)) return 1;
  return t >= double(kMaxHorizon) ? kMaxHorizon : static_cast<int>(t);
}

struct SimConfig {
  int horizon = 0;  // 0 resolves to default_horizon(gamma)
  int num_trajectories = 4000;
  std::uint32_t initial_state = 0;                // joint storage mask at slot 0
  std::optional<std::uint32_t> initial_requests;  // pins the slot-0 request vector
  std::uint64_t seed = 2;

  int effective_horizon(double gamma) const { return horizon > 0 ? horizon : default_horizon(gamma); }

  void validate(const ModelConfig& model) const {
    if (horizon < 0 || horizon > kMaxHorizon)
      throw std::invalid_argument("horizon: must lie in [0, " + std::to_string(kMaxHorizon) + "]");
    if (num_trajectories < 1) throw std::invalid_argument("num_trajectories: must be >= 1");
    if (initial_state >= model.num_states())
      throw std::invalid_argument("initial_state: mask has bits outside the entity range");
    if (initial_requests && *initial_requests >= model.num_states())
      throw std::invalid_argument("initial_requests: mask has bits outside the entity range");
  }
};

/// Raised when a policy emits an infeasible action during rollout.
struct SimError : std::runtime_error {
  int trajectory;
  int slot;
  SimError(const std::string& policy, int trajectory_, int slot_)
      : std::runtime_error("policy '" + policy + "' produced an infeasible action at trajectory " +
                           std::to_string(trajectory_) + ", slot " + std::to_string(slot_)),
        trajectory(trajectory_),
        slot(slot_) {}
};

/// Per-trajectory rollout records, kept separate so paired comparisons can
/// difference trajectory by trajectory.
struct SimRaw {
  int num_trajectories = 0;
  int horizon = 0;
  int num_entities = 1;
  std::vector<double> discounted_cost;     // per trajectory
  std::vector<double> cn_discounted_cost;  // hub share, per trajectory
  std::vector<std::uint64_t> cache_slots;  // per trajectory * entity: slots with the file kept
  std::vector<std::uint32_t> first_cache;  // per trajectory: slot-0 caching vector
};

struct SimReport {
  std::string policy;
  int trajectory_count = 0;
  int horizon = 0;
  double mean_discounted_cost = 0.0;
  double discounted_cost_stderr = 0.0;
  double mean_cn_discounted_cost = 0.0;
  double cn_discounted_cost_stderr = 0.0;
  std::vector<double> caching_ratio;             // per entity, over all slots
  std::vector<double> caching_ratio_stderr;
  std::vector<double> first_step_cache_prob;     // per entity, over trajectories
  std::vector<double> first_step_cache_prob_stderr;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["policy"] = policy;
    j["trajectories"] = trajectory_count;
    j["horizon"] = horizon;
    j["mean_discounted_cost"] = mean_discounted_cost;
    j["discounted_cost_stderr"] = discounted_cost_stderr;
    j["cn_discounted_cost"] = mean_cn_discounted_cost;
    j["cn_discounted_cost_stderr"] = cn_discounted_cost_stderr;
    j["caching_ratio"] = caching_ratio;
    j["caching_ratio_stderr"] = caching_ratio_stderr;
    j["first_step_cache_prob"] = first_step_cache_prob;
    j["first_step_cache_prob_stderr"] = first_step_cache_prob_stderr;
    j["config_hash"] = hex64(config_hash);
    j["seed"] = seed;
    return j;
  }

  static const char* csv_header() {
    return "policy,trajectories,horizon,mean_discounted_cost,discounted_cost_stderr,"
           "cn_discounted_cost,cn_discounted_cost_stderr,first_step_cache_prob_cn,"
           "caching_ratio_cn,config_hash,seed";
  }

  /// Hub-focused single-line form for quick aggregation.
  std::string csv_row() const {
    std::string row = policy;
    row += "," + std::to_string(trajectory_count);
    row += "," + std::to_string(horizon);
    row += "," + format_double(mean_discounted_cost);
    row += "," + format_double(discounted_cost_stderr);
    row += "," + format_double(mean_cn_discounted_cost);
    row += "," + format_double(cn_discounted_cost_stderr);
    row += "," + format_double(first_step_cache_prob.empty() ? 0.0 : first_step_cache_prob[0]);
    row += "," + format_double(caching_ratio.empty() ? 0.0 : caching_ratio[0]);
    row += "," + hex64(config_hash);
    row += "," + std::to_string(seed);
    return row;
  }
};

/// Rolls the policy out under the configured law. Trajectory r, slot t reads
/// draw index r * 2^20 + t of the simulation domain, so runs are reproducible
/// from the seed alone, trajectories parallelize without changing results,
/// and extending the horizon extends each trajectory's draw sequence without
/// disturbing its prefix. Every emitted action is feasibility-checked; a
/// violation aborts the run naming the policy, trajectory, and slot.
inline SimRaw simulate_raw(const ModelConfig& model, const Policy& policy, const SimConfig& cfg,
                           unsigned threads = 1) {
  model.validate();
  cfg.validate(model);
  const int T = cfg.effective_horizon(model.gamma);
  const int R = cfg.num_trajectories;
  const int e = model.num_entities();

  SimRaw raw;
  raw.num_trajectories = R;
  raw.horizon = T;
  raw.num_entities = e;
  raw.discounted_cost.resize(static_cast<std::size_t>(R));
  raw.cn_discounted_cost.resize(static_cast<std::size_t>(R));
  raw.cache_slots.assign(static_cast<std::size_t>(R) * e, 0);
  raw.first_cache.resize(static_cast<std::size_t>(R));

  const DrawStream stream{cfg.seed, kDomainSim};
  parallel_chunks(static_cast<std::size_t>(R), threads, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      StorageState s{cfg.initial_state, e};
      detail::KahanSum<double> cost, cn_cost;
      double discount = 1.0;
      for (int t = 0; t < T; ++t) {
        Exogenous exo = sample_exogenous(model, stream, (std::uint64_t(r) << 20) | std::uint64_t(t));
        if (t == 0 && cfg.initial_requests) exo.requests = *cfg.initial_requests;
        const Action act = policy.decide(s, exo);
        if (!is_feasible(s, exo, act))
          throw SimError(std::string(policy.name()), static_cast<int>(r), t);
        cost.add(discount * step_cost(exo, act));
        cn_cost.add(discount * cn_step_cost(exo, act));
        for (std::uint32_t rest = act.cache; rest != 0; rest &= rest - 1)
          ++raw.cache_slots[r * e + std::countr_zero(rest)];
        if (t == 0) raw.first_cache[r] = act.cache;
        s = transition(act, e);
        discount *= model.gamma;
      }
      raw.discounted_cost[r] = cost.value();
      raw.cn_discounted_cost[r] = cn_cost.value();
    }
  });
  return raw;
}

namespace detail {

inline std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  KahanSum<double> sum;
  for (double x : xs) sum.add(x);
  const double mean = sum.value() / static_cast<double>(n);
  if (n < 2) return {mean, 0.0};
  KahanSum<double> sq;
  for (double x : xs) sq.add((x - mean) * (x - mean));
  const double var = sq.value() / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

}  // namespace detail

inline SimReport summarize(const ModelConfig& model, std::string_view policy_name,
                           const SimConfig& cfg, const SimRaw& raw) {
  SimReport rep;
  rep.policy = std::string(policy_name);
  rep.trajectory_count = raw.num_trajectories;
  rep.horizon = raw.horizon;
  rep.config_hash = model.fingerprint();
  rep.seed = cfg.seed;

  std::tie(rep.mean_discounted_cost, rep.discounted_cost_stderr) =
      detail::mean_stderr(raw.discounted_cost);
  std::tie(rep.mean_cn_discounted_cost, rep.cn_discounted_cost_stderr) =
      detail::mean_stderr(raw.cn_discounted_cost);

  const int e = raw.num_entities;
  const int R = raw.num_trajectories;
  rep.caching_ratio.resize(e);
  rep.caching_ratio_stderr.resize(e);
  rep.first_step_cache_prob.resize(e);
  rep.first_step_cache_prob_stderr.resize(e);
  std::vector<double> per_traj(static_cast<std::size_t>(R));
  for (int m = 0; m < e; ++m) {
    for (int r = 0; r < R; ++r)
      per_traj[r] = static_cast<double>(raw.cache_slots[std::size_t(r) * e + m]) /
                    static_cast<double>(raw.horizon);
    std::tie(rep.caching_ratio[m], rep.caching_ratio_stderr[m]) = detail::mean_stderr(per_traj);
    std::size_t hits = 0;
    for (int r = 0; r < R; ++r) hits += (raw.first_cache[r] >> m) & 1u;
    const double p = static_cast<double>(hits) / static_cast<double>(R);
    rep.first_step_cache_prob[m] = p;
    rep.first_step_cache_prob_stderr[m] = std::sqrt(p * (1.0 - p) / static_cast<double>(R));
  }
  return rep;
}

inline SimReport simulate(const ModelConfig& model, const Policy& policy, const SimConfig& cfg,
                          unsigned threads = 1) {
  return summarize(model, policy.name(), cfg, simulate_raw(model, policy, cfg, threads));
}

struct PairwiseDiff {
  std::string policy_a;
  std::string policy_b;
  double mean_diff = 0.0;    // mean of (a - b) per trajectory
  double stderr_diff = 0.0;  // paired standard error
};

struct CompareResult {
  std::vector<SimReport> reports;
  std::vector<PairwiseDiff> pairs;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["reports"] = nlohmann::json::array();
    for (const auto& r : reports) j["reports"].push_back(r.to_json());
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : pairs) {
      nlohmann::json e;
      e["policy_a"] = p.policy_a;
      e["policy_b"] = p.policy_b;
      e["mean_diff"] = p.mean_diff;
      e["stderr_diff"] = p.stderr_diff;
      j["pairs"].push_back(std::move(e));
    }
    return j;
  }
};

/// Runs every policy on the same trajectories (identical seed, hence
/// identical draws) and reports per-policy summaries plus paired cost
/// differences. A policy compared with itself differs by exactly zero.
inline CompareResult compare(const ModelConfig& model, const std::vector<const Policy*>& policies,
                             const SimConfig& cfg, unsigned threads = 1) {
  if (policies.empty()) throw std::invalid_argument("compare: need at least one policy");
  std::vector<SimRaw> raws;
  raws.reserve(policies.size());
  CompareResult out;
  for (const Policy* p : policies) {
    raws.push_back(simulate_raw(model, *p, cfg, threads));
    out.reports.push_back(summarize(model, p->name(), cfg, raws.back()));
  }
  std::vector<double> diffs(static_cast<std::size_t>(cfg.num_trajectories));
  for (std::size_t i = 0; i < policies.size(); ++i)
    for (std::size_t k = i + 1; k < policies.size(); ++k) {
      for (int r = 0; r < cfg.num_trajectories; ++r)
        diffs[r] = raws[i].discounted_cost[r] - raws[k].discounted_cost[r];
      const auto [mean, se] = detail::mean_stderr(diffs);
      out.pairs.push_back(PairwiseDiff{std::string(policies[i]->name()),
                                       std::string(policies[k]->name()), mean, se});
    }
  return out;
}

}  // namespace cachedp
