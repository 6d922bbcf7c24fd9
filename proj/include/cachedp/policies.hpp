#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cachedp/model.hpp"
#include "cachedp/solver.hpp"

namespace cachedp {

/// A deterministic decision rule: storage plus the slot's draw in, action out.
/// Implementations must return feasible actions for every input.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual Action decide(const StorageState& state, const Exogenous& exo) const = 0;
  virtual std::string_view name() const = 0;
};

/// Optimal one-slot response against a solved cost-to-go table.
class DpPolicy final : public Policy {
 public:
  DpPolicy(ValueTable table, double gamma) : table_(std::move(table)), gamma_(gamma) {
    table_.check_invariants();
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("gamma: must satisfy 0 <= gamma < 1");
  }
  Action decide(const StorageState& state, const Exogenous& exo) const override {
    return inner_minimize(state, exo, table_, gamma_).action;
  }
  std::string_view name() const override { return "dp"; }
  const ValueTable& table() const { return table_; }

 private:
  ValueTable table_;
  double gamma_;
};

/// Price-threshold rule with no lookahead: an entity keeps the file when it is
/// present or requested there and this slot's caching price undercuts the
/// entity's fetch price (for the hub, the cheapest inbound source; for a
/// node, its delivery price).
class MyopicPolicy final : public Policy {
 public:
  Action decide(const StorageState& state, const Exogenous& exo) const override {
    detail::require_same_shape(state, exo);
    const double hub_fetch = cheapest_inbound(state, exo).first;
    std::uint32_t cache = 0;
    for (int m = 0; m < state.num_entities; ++m) {
      const bool present = state.holds(m) || exo.requested(m);
      const double fetch_price = m == 0 ? hub_fetch : exo.lambda_out_at(m);
      if (present && exo.rho[m] < fetch_price) cache |= 1u << m;
    }
    return complete_action(state, exo, cache);
  }
  std::string_view name() const override { return "myopic"; }
};

/// Per-entity cost-to-go for the decoupled single-entity problems:
/// v[m] = {cost-to-go empty, cost-to-go holding}.
struct PerNodeValues {
  std::vector<std::pair<double, double>> v;
  bool all_converged = true;

  int num_entities() const noexcept { return static_cast<int>(v.size()); }

  void check_invariants() const {
    for (const auto& [empty, holding] : v)
      if (holding > empty + 1e-9 * (1.0 + std::abs(empty)))
        throw std::invalid_argument("per-entity values: holding must not cost more than empty");
  }
};

/// Each entity solved in isolation: the hub against the cloud price, each
/// node against its delivery price, with its own request stream and caching
/// price. Used by the separable policy as a surrogate for the joint table.
inline PerNodeValues compute_per_node_values(const ModelConfig& cfg, const SolverConfig& scfg,
                                             unsigned threads = 1) {
  cfg.validate();
  scfg.validate();
  PerNodeValues out;
  out.v.resize(static_cast<std::size_t>(cfg.num_entities()));
  for (int m = 0; m < cfg.num_entities(); ++m) {
    ModelConfig sub;
    sub.num_nodes = 0;
    sub.gamma = cfg.gamma;
    sub.request_probs = {cfg.request_probs[m]};
    sub.rho_means = {cfg.rho_means[m]};
    sub.lambda_cloud_mean = m == 0 ? cfg.lambda_cloud_mean : cfg.lambda_out_means[m - 1];
    SolverConfig sub_cfg = scfg;
    // distinct stream per entity so surrogate solves do not share draws
    sub_cfg.seed = detail::mix64(scfg.seed + 0x51ED270B8A13377ULL * (std::uint64_t(m) + 1));
    if (sub_cfg.epsilon == 0.0) sub_cfg.epsilon = scfg.effective_epsilon(cfg);
    const ValueTable t = value_iteration(sub, sub_cfg, SolveOptions{threads, nullptr});
    out.v[m] = {t.values[0], t.values[1]};
    out.all_converged = out.all_converged && t.converged;
  }
  out.check_invariants();
  return out;
}

/// Decoupled caching tests against per-entity surrogate values. Entities that
/// already hold the file, the hub, and nodes being served this slot compare
/// the caching price against the discounted surrogate gain; other nodes also
/// charge the delivery their caching would force. Fetching follows the
/// cheapest-source rule via the minimal completing action.
class SeparablePolicy final : public Policy {
 public:
  SeparablePolicy(PerNodeValues values, double gamma)
      : values_(std::move(values)), gamma_(gamma) {
    values_.check_invariants();
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("gamma: must satisfy 0 <= gamma < 1");
  }

  Action decide(const StorageState& state, const Exogenous& exo) const override {
    detail::require_same_shape(state, exo);
    if (values_.num_entities() != state.num_entities)
      throw std::invalid_argument("per-entity values do not match the state");
    const std::uint32_t nodes = ((1u << state.num_entities) - 1) & ~1u;
    const std::uint32_t supported = state.mask | 1u | (exo.requests & nodes);
    std::uint32_t cache = 0;
    for (int m = 0; m < state.num_entities; ++m) {
      const auto& [v_empty, v_holding] = values_.v[m];
      const double gain = gamma_ * (v_empty - v_holding);
      const double charge =
          (supported >> m) & 1u ? exo.rho[m] : exo.rho[m] + exo.lambda_out_at(m);
      if (charge < gain) cache |= 1u << m;
    }
    return complete_action(state, exo, cache);
  }
  std::string_view name() const override { return "separable"; }

 private:
  PerNodeValues values_;
  double gamma_;
};

/// Serves demand with minimal fetches and never keeps the file anywhere.
class NeverCachePolicy final : public Policy {
 public:
  Action decide(const StorageState& state, const Exogenous& exo) const override {
    return complete_action(state, exo, 0);
  }
  std::string_view name() const override { return "never"; }
};

/// Keeps the file everywhere, paying whatever fetches that forces.
class AlwaysCachePolicy final : public Policy {
 public:
  Action decide(const StorageState& state, const Exogenous& exo) const override {
    return complete_action(state, exo, (1u << state.num_entities) - 1);
  }
  std::string_view name() const override { return "always"; }
};

inline const std::vector<std::string>& policy_names() {
  static const std::vector<std::string> names = {"dp", "myopic", "separable", "never", "always"};
  return names;
}

/// Policies instantiated for one model, with whatever solves they need.
/// "dp" triggers a full table solve (kept in `table` for provenance),
/// "separable" the per-entity surrogate solves.
struct BuiltPolicies {
  std::vector<std::unique_ptr<Policy>> list;
  std::optional<ValueTable> table;
  bool solver_converged = true;
};

inline BuiltPolicies build_policies(const std::vector<std::string>& names,
                                    const ModelConfig& model, const SolverConfig& scfg,
                                    unsigned threads = 1) {
  BuiltPolicies out;
  for (const auto& name : names) {
    if (name == "dp") {
      if (!out.table) {
        out.table = value_iteration(model, scfg, SolveOptions{threads, nullptr});
        out.solver_converged = out.solver_converged && out.table->converged;
      }
      out.list.push_back(std::make_unique<DpPolicy>(*out.table, model.gamma));
    } else if (name == "myopic") {
      out.list.push_back(std::make_unique<MyopicPolicy>());
    } else if (name == "separable") {
      PerNodeValues v = compute_per_node_values(model, scfg, threads);
      out.solver_converged = out.solver_converged && v.all_converged;
      out.list.push_back(std::make_unique<SeparablePolicy>(std::move(v), model.gamma));
    } else if (name == "never") {
      out.list.push_back(std::make_unique<NeverCachePolicy>());
    } else if (name == "always") {
      out.list.push_back(std::make_unique<AlwaysCachePolicy>());
    } else {
      std::string known;
      for (const auto& n : policy_names()) known += (known.empty() ? "" : ", ") + n;
      throw std::invalid_argument("policies: unknown policy '" + name + "' (known: " + known + ")");
    }
  }
  return out;
}

}  // namespace cachedp
