#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cachedp/model.hpp"
#include "cachedp/sampling.hpp"
#include "cachedp/util.hpp"

namespace cachedp {

struct SolverConfig {
  double epsilon = 0.0;       // 0 resolves to 1e-4 * largest configured price mean
  int max_iterations = 10000;
  int num_samples = 2000;
  std::uint64_t seed = 1;

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
      throw std::invalid_argument("epsilon: must be finite and >= 0");
    if (max_iterations < 1) throw std::invalid_argument("max_iterations: must be >= 1");
    if (num_samples < 1) throw std::invalid_argument("num_samples: must be >= 1");
  }

  double effective_epsilon(const ModelConfig& cfg) const {
    if (epsilon > 0.0) return epsilon;
    const double scale = cfg.max_price_mean();
    return scale > 0.0 ? 1e-4 * scale : 1e-8;
  }
};

/// Expected cost-to-go per storage state, dense in the state index, plus the
/// solve metadata needed to reuse it safely (model fingerprint, draw seed,
/// final residual). Entries are finite, nonnegative, and nonincreasing as
/// storage grows: dropping a held copy can only raise the cost-to-go.
struct ValueTable {
  int num_entities = 1;
  std::vector<double> values;
  std::uint64_t config_hash = 0;
  std::uint64_t sample_seed = 0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = true;
  std::vector<double> residual_history;  // sup-norm change per sweep, oldest first

  double at(const StorageState& s) const {
    if (s.num_entities != num_entities)
      throw std::invalid_argument("state entity count does not match the table");
    return values.at(s.mask);
  }

  void check_invariants() const {
    const std::size_t expect = std::size_t{1} << num_entities;
    if (values.size() != expect)
      throw std::invalid_argument("value table: expected " + std::to_string(expect) +
                                  " entries, got " + std::to_string(values.size()));
    for (double v : values)
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("value table: entries must be finite and >= 0");
    // Checking each single-bit drop covers the whole partial order by
    // transitivity. The slack absorbs last-ulp rounding only.
    for (std::uint32_t s = 0; s < values.size(); ++s)
      for (std::uint32_t rest = s; rest != 0; rest &= rest - 1) {
        const std::uint32_t smaller = s & ~(rest & (~rest + 1u));
        if (values[smaller] < values[s] - 1e-9 * (1.0 + std::abs(values[s])))
          throw std::invalid_argument("value table: values must not increase with storage");
      }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config_hash"] = hex64(config_hash);
    j["seed"] = sample_seed;
    j["residual"] = residual;
    j["iterations"] = iterations;
    j["converged"] = converged;
    j["num_entities"] = num_entities;
    j["values"] = values;
    return j;
  }

  static ValueTable from_json(const nlohmann::json& j) {
    ValueTable t;
    t.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    t.sample_seed = j.at("seed").get<std::uint64_t>();
    t.residual = j.at("residual").get<double>();
    t.iterations = j.at("iterations").get<int>();
    t.converged = j.at("converged").get<bool>();
    t.num_entities = j.at("num_entities").get<int>();
    t.values = j.at("values").get<std::vector<double>>();
    t.check_invariants();
    return t;
  }

  void save_json(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json().dump(2) + "\n");
  }

  static ValueTable load_json(const std::filesystem::path& path) {
    return from_json(nlohmann::json::parse(read_text_file(path)));
  }

  /// Flat little-endian binary: magic, entity count, fingerprint, seed,
  /// iterations, converged flag, residual, count, raw doubles.
  void save_binary(const std::filesystem::path& path) const {
    std::string buf;
    buf.reserve(64 + values.size() * sizeof(double));
    auto put = [&buf](const void* p, std::size_t n) {
      buf.append(static_cast<const char*>(p), n);
    };
    buf.append("CDPVTB01", 8);
    const std::uint32_t e = static_cast<std::uint32_t>(num_entities);
    const std::uint32_t it = static_cast<std::uint32_t>(iterations);
    const std::uint8_t conv = converged ? 1 : 0;
    const std::uint64_t count = values.size();
    put(&e, sizeof e);
    put(&config_hash, sizeof config_hash);
    put(&sample_seed, sizeof sample_seed);
    put(&it, sizeof it);
    put(&conv, sizeof conv);
    put(&residual, sizeof residual);
    put(&count, sizeof count);
    put(values.data(), values.size() * sizeof(double));
    write_file_atomic(path, buf);
  }

  static ValueTable load_binary(const std::filesystem::path& path) {
    const std::string buf = read_text_file(path);
    if (buf.size() < 8 || buf.compare(0, 8, "CDPVTB01") != 0)
      throw std::runtime_error("not a value table binary: " + path.string());
    std::size_t off = 8;
    auto get = [&buf, &off, &path](void* p, std::size_t n) {
      if (off + n > buf.size()) throw std::runtime_error("truncated value table binary: " + path.string());
      std::memcpy(p, buf.data() + off, n);
      off += n;
    };
    ValueTable t;
    std::uint32_t e = 0, it = 0;
    std::uint8_t conv = 0;
    std::uint64_t count = 0;
    get(&e, sizeof e);
    get(&t.config_hash, sizeof t.config_hash);
    get(&t.sample_seed, sizeof t.sample_seed);
    get(&it, sizeof it);
    get(&conv, sizeof conv);
    get(&t.residual, sizeof t.residual);
    get(&count, sizeof count);
    t.num_entities = static_cast<int>(e);
    t.iterations = static_cast<int>(it);
    t.converged = conv != 0;
    t.values.resize(count);
    get(t.values.data(), count * sizeof(double));
    t.check_invariants();
    return t;
  }
};

struct BellmanResult {
  Action action;
  double cost = 0.0;  // step_cost(exo, action) + gamma * V(transition(action))
};

namespace detail {

template <class Real>
struct BellmanScratch {
  std::vector<Real> rho_sum;  // caching price of each cache mask
  std::vector<Real> out_sum;  // delivery price of each node set, indexed by mask >> 1
};

/// One-slot minimization for a single (state, draw) pair. Candidates are the
/// caching vectors; each candidate implies its deliveries (nodes that must
/// receive the file) and at most one inbound fetch from the cheapest source.
/// The table is indexed directly by the candidate since next storage equals
/// the caching vector. Ties keep the lowest candidate index.
template <class Real>
std::pair<std::uint32_t, Real> best_caching(const StorageState& state, const Exogenous& exo,
                                            const Real* values, double gamma,
                                            BellmanScratch<Real>& ws) {
  const std::uint32_t full = 1u << state.num_entities;
  const std::uint32_t nodes = (full - 1) & ~1u;
  const std::uint32_t s = state.mask;

  ws.rho_sum.resize(full);
  ws.rho_sum[0] = Real(0);
  for (std::uint32_t a = 1; a < full; ++a)
    ws.rho_sum[a] = ws.rho_sum[a & (a - 1)] + Real(exo.rho[std::countr_zero(a)]);
  const std::uint32_t node_sets = full >> 1;
  ws.out_sum.resize(node_sets);
  ws.out_sum[0] = Real(0);
  for (std::uint32_t d = 1; d < node_sets; ++d)
    ws.out_sum[d] = ws.out_sum[d & (d - 1)] + Real(exo.lambda_out[std::countr_zero(d)]);

  const std::uint32_t missing = exo.requests & ~s & nodes;
  const bool hub_need = (exo.requests & 1u) != 0 || missing != 0;
  const bool hub_holds = (s & 1u) != 0;
  Real inbound = Real(exo.lambda_cloud);
  if (!hub_holds)
    for (std::uint32_t rest = s & nodes; rest != 0; rest &= rest - 1) {
      const Real v = Real(exo.lambda_in[std::countr_zero(rest) - 1]);
      if (v < inbound) inbound = v;
    }
  const Real g = Real(gamma);

  std::uint32_t best_a = 0;
  Real best = std::numeric_limits<Real>::infinity();
  for (std::uint32_t a = 0; a < full; ++a) {
    const std::uint32_t fresh = a & ~s;
    const std::uint32_t deliver = (missing | fresh) & nodes;
    Real total = ws.rho_sum[a] + ws.out_sum[deliver >> 1] + g * values[a];
    if (!hub_holds && (hub_need || deliver != 0 || (fresh & 1u) != 0)) total += inbound;
    if (total < best) {
      best = total;
      best_a = a;
    }
  }
  return {best_a, best};
}

template <class Real>
void check_monotone(const std::vector<Real>& v, const char* where) {
  for (std::uint32_t s = 0; s < v.size(); ++s)
    for (std::uint32_t rest = s; rest != 0; rest &= rest - 1) {
      const std::uint32_t smaller = s & ~(rest & (~rest + 1u));
      if (v[smaller] < v[s] - Real(1e-9) * (Real(1) + (v[s] < 0 ? -v[s] : v[s])))
        throw std::logic_error(std::string(where) + ": value table lost monotonicity");
    }
}

}  // namespace detail

/// Cheapest feasible one-slot decision against a fixed cost-to-go table.
/// The returned cost satisfies cost == step_cost(exo, action)
/// + gamma * values[index(transition(action))] exactly. Ties are broken
/// toward the smallest caching-vector index; within a caching vector the
/// action carries the minimal deliveries and the single cheapest inbound
/// fetch (cloud first, then lowest node index, on price ties).
inline BellmanResult inner_minimize(const StorageState& state, const Exogenous& exo,
                                    const ValueTable& table, double gamma) {
  detail::require_same_shape(state, exo);
  if (table.num_entities != state.num_entities)
    throw std::invalid_argument("value table entity count does not match the state");
  if (table.values.size() != (std::size_t{1} << state.num_entities))
    throw std::invalid_argument("value table size does not match the entity count");
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw std::invalid_argument("gamma: must satisfy 0 <= gamma < 1");

  detail::BellmanScratch<double> ws;
  const auto [mask, fast_value] =
      detail::best_caching<double>(state, exo, table.values.data(), gamma, ws);
  (void)fast_value;
  BellmanResult out;
  out.action = complete_action(state, exo, mask);
  out.cost = step_cost(exo, out.action) + gamma * table.values[out.action.cache];
  return out;
}

struct SolveOptions {
  unsigned threads = 1;  // 0 picks CACHEDP_THREADS or hardware concurrency
  std::function<void(int iteration, double residual, const std::vector<double>& values)>
      on_iteration;
};

/// Sweeps the sampled expected-minimization operator to a fixed point,
/// starting from the all-zero table. One fixed sample set is reused for every
/// state and sweep, so each sweep is a gamma-contraction in the sup norm and
/// the residual sequence decays geometrically. Iterates are kept in extended
/// precision so the recorded residuals are not polluted by table rounding;
/// the returned table is rounded to double. Stops once the sup-norm change
/// drops below the (resolved) epsilon, else runs max_iterations and returns
/// converged == false.
inline ValueTable value_iteration(const ModelConfig& model, const SolverConfig& cfg,
                                  const SampleSet& samples, const SolveOptions& opts = {}) {
  model.validate();
  cfg.validate();
  if (samples.config_hash != model.fingerprint())
    throw std::invalid_argument("sample set was generated for a different model");
  if (samples.draws.empty()) throw std::invalid_argument("sample set is empty");
  const double eps = cfg.effective_epsilon(model);
  const std::size_t S = model.num_states();
  const int e = model.num_entities();

  using Real = long double;
  std::vector<Real> cur(S, Real(0)), nxt(S, Real(0));
  std::vector<double> history;
  std::vector<double> snapshot;
  bool converged = false;
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    parallel_chunks(S, opts.threads, [&](std::size_t lo, std::size_t hi) {
      detail::BellmanScratch<Real> ws;
      for (std::size_t s = lo; s < hi; ++s) {
        const StorageState st{static_cast<std::uint32_t>(s), e};
        detail::KahanSum<Real> acc;
        for (const auto& exo : samples.draws)
          acc.add(detail::best_caching<Real>(st, exo, cur.data(), model.gamma, ws).second);
        nxt[s] = acc.value() / Real(samples.draws.size());
      }
    });
    Real r = 0;
    for (std::size_t s = 0; s < S; ++s) {
      const Real d = nxt[s] >= cur[s] ? nxt[s] - cur[s] : cur[s] - nxt[s];
      if (d > r) r = d;
    }
    detail::check_monotone(nxt, "value_iteration");
    cur.swap(nxt);
    iterations = it;
    residual = static_cast<double>(r);
    history.push_back(residual);
    if (opts.on_iteration) {
      snapshot.assign(cur.begin(), cur.end());
      opts.on_iteration(it, residual, snapshot);
    }
    if (r < Real(eps)) {
      converged = true;
      break;
    }
  }

  ValueTable table;
  table.num_entities = e;
  table.values.assign(cur.begin(), cur.end());
  table.config_hash = model.fingerprint();
  table.sample_seed = samples.seed;
  table.iterations = iterations;
  table.residual = residual;
  table.converged = converged;
  table.residual_history = std::move(history);
  table.check_invariants();
  return table;
}

/// Convenience overload that generates the sample set from the solver seed.
inline ValueTable value_iteration(const ModelConfig& model, const SolverConfig& cfg,
                                  const SolveOptions& opts = {}) {
  return value_iteration(model, cfg,
                         SampleSet::generate(model, static_cast<std::size_t>(cfg.num_samples),
                                             cfg.seed),
                         opts);
}

/// One sweep of the sampled operator over an arbitrary table.
inline std::vector<double> bellman_apply(const ModelConfig& model, const SampleSet& samples,
                                         std::span<const double> values, unsigned threads = 1) {
  model.validate();
  if (samples.draws.empty()) throw std::invalid_argument("sample set is empty");
  if (samples.config_hash != model.fingerprint())
    throw std::invalid_argument("sample set was generated for a different model");
  const std::size_t S = model.num_states();
  if (values.size() != S) throw std::invalid_argument("value table size does not match the model");
  const int e = model.num_entities();
  std::vector<double> out(S);
  parallel_chunks(S, threads, [&](std::size_t lo, std::size_t hi) {
    detail::BellmanScratch<double> ws;
    for (std::size_t s = lo; s < hi; ++s) {
      const StorageState st{static_cast<std::uint32_t>(s), e};
      detail::KahanSum<double> acc;
      for (const auto& exo : samples.draws)
        acc.add(detail::best_caching<double>(st, exo, values.data(), model.gamma, ws).second);
      out[s] = acc.value() / static_cast<double>(samples.draws.size());
    }
  });
  return out;
}

/// Sup-norm distance between a table and one sweep of the sampled operator,
/// with the sample set regenerated from the solver seed. A table solved to
/// epsilon lands below epsilon * (1 + gamma).
inline double bellman_residual(const ValueTable& table, const ModelConfig& model,
                               const SolverConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  const SampleSet samples =
      SampleSet::generate(model, static_cast<std::size_t>(cfg.num_samples), cfg.seed);
  const std::vector<double> applied = bellman_apply(model, samples, table.values, threads);
  double r = 0.0;
  for (std::size_t s = 0; s < applied.size(); ++s)
    r = std::max(r, std::abs(applied[s] - table.values[s]));
  return r;
}

}  // namespace cachedp
