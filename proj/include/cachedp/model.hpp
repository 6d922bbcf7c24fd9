#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cachedp/util.hpp"

namespace cachedp {

/// Default cap on the number of regular nodes. Tables are dense in the joint
/// storage state, so memory and solve time grow as 2^(num_nodes+1).
inline constexpr int kDefaultNodeLimit = 16;

/// Static description of one cached file's economy: a hub (entity 0, the
/// central node) that can reach a cloud origin, plus num_nodes regular nodes
/// that can only exchange the file with the hub. Requests are Bernoulli per
/// entity; every price is uniform on [0, 2 * mean), so the configured mean is
/// the expected price.
struct ModelConfig {
  int num_nodes = 0;                    // entity 0 is the hub; entities 1..num_nodes are regular nodes
  double gamma = 0.0;                   // discount factor, 0 <= gamma < 1
  std::vector<double> request_probs;    // per entity, size num_nodes + 1
  std::vector<double> rho_means;        // caching price mean per entity, size num_nodes + 1
  double lambda_cloud_mean = 0.0;       // cloud -> hub fetch price mean
  std::vector<double> lambda_in_means;  // node m -> hub price mean, index m - 1
  std::vector<double> lambda_out_means; // hub -> node m price mean, index m - 1
  int node_limit = kDefaultNodeLimit;   // size guard only; not part of the fingerprint

  int num_entities() const noexcept { return num_nodes + 1; }
  std::uint32_t num_states() const noexcept { return 1u << num_entities(); }
  std::uint32_t all_entities_mask() const noexcept { return num_states() - 1; }
  std::uint32_t node_mask() const noexcept { return all_entities_mask() & ~1u; }

  double max_price_mean() const {
    double m = lambda_cloud_mean;
    for (double v : rho_means) m = std::max(m, v);
    for (double v : lambda_in_means) m = std::max(m, v);
    for (double v : lambda_out_means) m = std::max(m, v);
    return m;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    if (num_nodes < 0) fail("num_nodes: must be >= 0");
    if (node_limit < 0) fail("node_limit: must be >= 0");
    if (num_nodes > node_limit)
      fail("num_nodes: " + std::to_string(num_nodes) + " exceeds node_limit " +
           std::to_string(node_limit));
    if (num_nodes + 1 > 31) fail("num_nodes: state mask would overflow 32 bits");
    if (!(gamma >= 0.0 && gamma < 1.0)) fail("gamma: must satisfy 0 <= gamma < 1");
    const std::size_t e = static_cast<std::size_t>(num_entities());
    const std::size_t m = static_cast<std::size_t>(num_nodes);
    if (request_probs.size() != e)
      fail("request_probs: expected " + std::to_string(e) + " entries, got " +
           std::to_string(request_probs.size()));
    if (rho_means.size() != e)
      fail("rho_means: expected " + std::to_string(e) + " entries, got " +
           std::to_string(rho_means.size()));
    if (lambda_in_means.size() != m)
      fail("lambda_in_means: expected " + std::to_string(m) + " entries, got " +
           std::to_string(lambda_in_means.size()));
    if (lambda_out_means.size() != m)
      fail("lambda_out_means: expected " + std::to_string(m) + " entries, got " +
           std::to_string(lambda_out_means.size()));
    for (double p : request_probs)
      if (!(p >= 0.0 && p <= 1.0)) fail("request_probs: entries must lie in [0, 1]");
    auto check_means = [&fail](const std::vector<double>& v, const char* key) {
      for (double x : v)
        if (!(x >= 0.0) || !std::isfinite(x))
          fail(std::string(key) + ": price means must be finite and >= 0");
    };
    check_means(rho_means, "rho_means");
    check_means(lambda_in_means, "lambda_in_means");
    check_means(lambda_out_means, "lambda_out_means");
    if (!(lambda_cloud_mean >= 0.0) || !std::isfinite(lambda_cloud_mean))
      fail("lambda_cloud_mean: must be finite and >= 0");
  }

  /// Stable across processes; covers every field that affects the law of the
  /// problem (node_limit is an operational guard and is excluded).
  std::uint64_t fingerprint() const {
    std::uint64_t h = detail::fnv1a64("cachedp.model.v1", 16);
    h = detail::fnv1a64_value(std::uint32_t(num_nodes), h);
    h = detail::fnv1a64_value(gamma, h);
    auto fold = [&h](const std::vector<double>& v) {
      h = detail::fnv1a64_value(std::uint32_t(v.size()), h);
      for (double x : v) h = detail::fnv1a64_value(x, h);
    };
    fold(request_probs);
    fold(rho_means);
    h = detail::fnv1a64_value(lambda_cloud_mean, h);
    fold(lambda_in_means);
    fold(lambda_out_means);
    return h;
  }
};

/// Joint storage indicator. Bit m set means entity m holds the file at the
/// start of the slot; the bit pattern doubles as the dense table index, so
/// index(s) = sum_m s_m 2^m with the hub at bit 0.
struct StorageState {
  std::uint32_t mask = 0;
  int num_entities = 1;

  bool holds(int m) const noexcept { return (mask >> m) & 1u; }
  std::uint32_t index() const noexcept { return mask; }
  bool operator==(const StorageState&) const = default;
};

/// One slot's realized requests and prices.
struct Exogenous {
  int num_entities = 1;
  std::uint32_t requests = 0;      // bit m: entity m sees a local request this slot
  std::vector<double> rho;         // caching price per entity
  double lambda_cloud = 0.0;       // cloud -> hub fetch price
  std::vector<double> lambda_in;   // node m -> hub, index m - 1
  std::vector<double> lambda_out;  // hub -> node m, index m - 1

  bool requested(int m) const noexcept { return (requests >> m) & 1u; }
  double lambda_in_at(int m) const { return lambda_in.at(static_cast<std::size_t>(m) - 1); }
  double lambda_out_at(int m) const { return lambda_out.at(static_cast<std::size_t>(m) - 1); }
};

/// Fetch and cache decisions for one slot. Node sets use entity bit positions
/// (bits 1..M); bit 0 of fetch_from / deliver_to is never set. fetch_cloud and
/// fetch_from move the file toward the hub, deliver_to pushes it to nodes, and
/// cache names the entities that hold the file at the end of the slot.
struct Action {
  bool fetch_cloud = false;
  std::uint32_t fetch_from = 0;
  std::uint32_t deliver_to = 0;
  std::uint32_t cache = 0;

  bool operator==(const Action&) const = default;
};

namespace detail {

inline void require_same_shape(const StorageState& s, const Exogenous& exo) {
  if (s.num_entities != exo.num_entities)
    throw std::invalid_argument("state has " + std::to_string(s.num_entities) +
                                " entities but draw has " + std::to_string(exo.num_entities));
  const std::uint32_t full = 1u << s.num_entities;
  if (s.mask >= full) throw std::invalid_argument("storage mask has bits outside the entity range");
  if (exo.requests >= full)
    throw std::invalid_argument("request mask has bits outside the entity range");
  const std::size_t e = static_cast<std::size_t>(s.num_entities);
  if (exo.rho.size() != e || exo.lambda_in.size() + 1 != e || exo.lambda_out.size() + 1 != e)
    throw std::invalid_argument("draw price vectors do not match the entity count");
}

inline void require_action_shape(const StorageState& s, const Action& act) {
  const std::uint32_t full = 1u << s.num_entities;
  const std::uint32_t nodes = (full - 1) & ~1u;
  if (act.cache >= full) throw std::invalid_argument("cache mask has bits outside the entity range");
  if ((act.fetch_from & ~nodes) != 0)
    throw std::invalid_argument("fetch_from mask has bits outside the node range");
  if ((act.deliver_to & ~nodes) != 0)
    throw std::invalid_argument("deliver_to mask has bits outside the node range");
}

}  // namespace detail

/// True when the hub must obtain the file this slot to serve demand: either a
/// local hub request, or some node requests a file it does not hold.
inline bool cn_needs(const StorageState& s, const Exogenous& exo) {
  detail::require_same_shape(s, exo);
  const std::uint32_t nodes = ((1u << s.num_entities) - 1) & ~1u;
  return (exo.requests & 1u) != 0 || (exo.requests & ~s.mask & nodes) != 0;
}

/// Cheapest way to move the file into the hub right now: the cloud, or any
/// node currently holding it. Ties keep the cloud, then the lowest node index.
/// Returns {price, source} with source -1 for the cloud.
inline std::pair<double, int> cheapest_inbound(const StorageState& s, const Exogenous& exo) {
  detail::require_same_shape(s, exo);
  double best = exo.lambda_cloud;
  int src = -1;
  const std::uint32_t nodes = ((1u << s.num_entities) - 1) & ~1u;
  for (std::uint32_t rest = s.mask & nodes; rest != 0; rest &= rest - 1) {
    const int m = std::countr_zero(rest);
    if (exo.lambda_in_at(m) < best) {
      best = exo.lambda_in_at(m);
      src = m;
    }
  }
  return {best, src};
}

/// Feasibility of (fetches, deliveries, caching) against the current storage:
///  - every requested file is served: hub demand needs the file at the hub
///    (held, cloud-fetched, or pulled from a holding node); node requests not
///    served locally must be delivered;
///  - caching at a node requires the node to hold the file or receive it;
///    caching at the hub requires the hub to hold or obtain it;
///  - the hub can only push to a node if it holds the file, fetched it from
///    the cloud, or pulled it from some other node;
///  - the hub can only pull from nodes that hold the file.
/// Throws std::invalid_argument on shape mismatches.
inline bool is_feasible(const StorageState& s, const Exogenous& exo, const Action& act) {
  detail::require_same_shape(s, exo);
  detail::require_action_shape(s, act);
  const std::uint32_t full = 1u << s.num_entities;
  const std::uint32_t nodes = (full - 1) & ~1u;

  if ((act.fetch_from & ~s.mask) != 0) return false;  // pull only from holders
  const std::uint32_t sources = act.fetch_from;       // subset of s by the line above
  const bool hub_holds = (s.mask & 1u) != 0;
  const bool supply = hub_holds || act.fetch_cloud || sources != 0;

  if (cn_needs(s, exo) && !supply) return false;
  if ((exo.requests & ~s.mask & nodes & ~act.deliver_to) != 0) return false;
  if ((act.cache & nodes & ~(s.mask | act.deliver_to)) != 0) return false;
  if ((act.cache & 1u) != 0 && !supply) return false;
  if (!hub_holds && !act.fetch_cloud) {
    // every delivery needs a source other than its own target
    for (std::uint32_t rest = act.deliver_to; rest != 0; rest &= rest - 1) {
      const std::uint32_t bit = rest & (~rest + 1u);
      if ((sources & ~bit) == 0) return false;
    }
  }
  return true;
}

/// Total price paid this slot: cloud fetch, per-entity caching, node -> hub
/// pulls and hub -> node pushes. Linear in the action with the realized
/// prices as coefficients.
inline double step_cost(const Exogenous& exo, const Action& act) {
  double c = act.fetch_cloud ? exo.lambda_cloud : 0.0;
  if (act.cache & 1u) c += exo.rho[0];
  for (std::uint32_t rest = act.fetch_from; rest != 0; rest &= rest - 1)
    c += exo.lambda_in_at(std::countr_zero(rest));
  for (std::uint32_t rest = act.deliver_to; rest != 0; rest &= rest - 1)
    c += exo.lambda_out_at(std::countr_zero(rest));
  for (std::uint32_t rest = act.cache & ~1u; rest != 0; rest &= rest - 1)
    c += exo.rho[std::countr_zero(rest)];
  return c;
}

/// Share of step_cost carried by the hub: cloud fetch, hub caching, and
/// inbound pulls. Deliveries and node caching are charged to the nodes.
inline double cn_step_cost(const Exogenous& exo, const Action& act) {
  double c = act.fetch_cloud ? exo.lambda_cloud : 0.0;
  if (act.cache & 1u) c += exo.rho[0];
  for (std::uint32_t rest = act.fetch_from; rest != 0; rest &= rest - 1)
    c += exo.lambda_in_at(std::countr_zero(rest));
  return c;
}

/// Next slot's storage is exactly what was cached this slot.
inline StorageState transition(const Action& act, int num_entities) {
  if (act.cache >= (1u << num_entities))
    throw std::invalid_argument("cache mask has bits outside the entity range");
  return StorageState{act.cache, num_entities};
}

/// Cheapest action that realizes a desired caching vector: deliveries exactly
/// where a node must end up with (or currently lacks) the file, and one
/// inbound fetch when the hub needs the file but does not hold it, taken from
/// the cheapest source (cloud wins ties, then the lowest node index). Always
/// feasible since the cloud is always reachable.
inline Action complete_action(const StorageState& s, const Exogenous& exo,
                              std::uint32_t cache_mask) {
  detail::require_same_shape(s, exo);
  const std::uint32_t full = 1u << s.num_entities;
  if (cache_mask >= full) throw std::invalid_argument("cache mask has bits outside the entity range");
  const std::uint32_t nodes = (full - 1) & ~1u;

  Action act;
  act.cache = cache_mask;
  const std::uint32_t missing = exo.requests & ~s.mask & nodes;
  act.deliver_to = missing | (cache_mask & ~s.mask & nodes);
  const bool need = cn_needs(s, exo) || act.deliver_to != 0 || (cache_mask & ~s.mask & 1u) != 0;
  if (need && !(s.mask & 1u)) {
    const auto [price, src] = cheapest_inbound(s, exo);
    (void)price;
    if (src < 0)
      act.fetch_cloud = true;
    else
      act.fetch_from = 1u << src;
  }
  return act;
}

}  // namespace cachedp
