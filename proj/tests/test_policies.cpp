#include "test_helpers.hpp"

using namespace cachedp;

namespace {

Exogenous hub_exo(std::uint32_t requests, double rho0, double lambda_cloud) {
  Exogenous exo;
  exo.num_entities = 1;
  exo.requests = requests;
  exo.rho = {rho0};
  exo.lambda_cloud = lambda_cloud;
  return exo;
}

ModelConfig pair_model(double gamma = 0.9) {
  ModelConfig m;
  m.num_nodes = 1;
  m.gamma = gamma;
  m.request_probs = {0.5, 0.4};
  m.rho_means = {2.0, 1.5};
  m.lambda_cloud_mean = 8.0;
  m.lambda_in_means = {5.0};
  m.lambda_out_means = {6.0};
  return m;
}

}  // namespace

TEST_CASE("myopic threshold rule hand cases", "[policies]") {
  MyopicPolicy myopic;

  SECTION("cheap caching wins while fetching anyway") {
    const Action act = myopic.decide(StorageState{0u, 1}, hub_exo(0b1u, 3.0, 5.0));
    REQUIRE(act.fetch_cloud);
    REQUIRE(act.cache == 0b1u);
  }
  SECTION("expensive caching is skipped") {
    const Action act = myopic.decide(StorageState{0u, 1}, hub_exo(0b1u, 7.0, 5.0));
    REQUIRE(act.fetch_cloud);
    REQUIRE(act.cache == 0u);
  }
  SECTION("no request, no storage: do nothing") {
    REQUIRE(myopic.decide(StorageState{0u, 1}, hub_exo(0u, 0.01, 100.0)) == Action{});
  }
  SECTION("held file is kept while cheap") {
    const Action act = myopic.decide(StorageState{0b1u, 1}, hub_exo(0u, 3.0, 5.0));
    REQUIRE_FALSE(act.fetch_cloud);
    REQUIRE(act.cache == 0b1u);
  }
  SECTION("node compares its caching price against its delivery price") {
    Exogenous exo;
    exo.num_entities = 2;
    exo.requests = 0b10u;
    exo.rho = {9.0, 2.0};
    exo.lambda_cloud = 4.0;
    exo.lambda_in = {3.0};
    exo.lambda_out = {6.0};
    const Action act = myopic.decide(StorageState{0u, 2}, exo);
    REQUIRE(act.deliver_to == 0b10u);  // request must be served either way
    REQUIRE(act.fetch_cloud);
    REQUIRE(act.cache == 0b10u);  // 2 < 6 at the node; 9 > 4 at the hub

    exo.rho[1] = 7.0;  // now 7 > 6: serve but do not keep
    REQUIRE(myopic.decide(StorageState{0u, 2}, exo).cache == 0u);
  }
  SECTION("hub fetch price is the cheapest available source") {
    Exogenous exo;
    exo.num_entities = 2;
    exo.requests = 0b01u;
    exo.rho = {4.0, 9.0};
    exo.lambda_cloud = 10.0;
    exo.lambda_in = {3.0};
    exo.lambda_out = {6.0};
    // Node 1 holds the file: effective fetch price is 3, so rho 4 loses.
    const Action act = myopic.decide(StorageState{0b10u, 2}, exo);
    REQUIRE(act.fetch_from == 0b10u);
    REQUIRE(act.cache == 0u);
    // Without the node copy the price is the cloud's 10 and rho 4 wins.
    const Action cloud_act = myopic.decide(StorageState{0u, 2}, exo);
    REQUIRE(cloud_act.fetch_cloud);
    REQUIRE(cloud_act.cache == 0b01u);
  }
}

TEST_CASE("dp policy at gamma zero is the exact one-shot minimizer", "[policies]") {
  std::mt19937_64 rng(21);
  ValueTable flat;
  flat.num_entities = 3;
  flat.values.assign(8, 0.0);
  const DpPolicy dp(flat, 0.0);
  const ModelConfig m = testutil::random_model(rng, 2, 0.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Exogenous exo = testutil::random_exo(m, rng);
    const StorageState s{std::uint32_t(rng()) & 0b111u, 3};
    const Action act = dp.decide(s, exo);
    const testutil::OracleBest oracle = testutil::oracle_best(s, exo, flat.values, 0.0);
    REQUIRE(step_cost(exo, act) == oracle.cost);
    if (oracle.ties.size() == 1) REQUIRE(act == oracle.action);
  }
}

TEST_CASE("per-entity surrogate values", "[policies]") {
  SECTION("zero prices give zero values") {
    ModelConfig m = pair_model();
    m.rho_means = {0.0, 0.0};
    m.lambda_cloud_mean = 0.0;
    m.lambda_in_means = {0.0};
    m.lambda_out_means = {0.0};
    SolverConfig scfg;
    scfg.num_samples = 100;
    const PerNodeValues v = compute_per_node_values(m, scfg);
    REQUIRE(v.num_entities() == 2);
    for (const auto& [empty, holding] : v.v) {
      REQUIRE(empty == 0.0);
      REQUIRE(holding == 0.0);
    }
  }
  SECTION("holding never costs more than empty") {
    SolverConfig scfg;
    scfg.num_samples = 500;
    const PerNodeValues v = compute_per_node_values(pair_model(), scfg);
    REQUIRE(v.all_converged);
    for (const auto& [empty, holding] : v.v) {
      REQUIRE(holding <= empty);
      REQUIRE(empty > 0.0);
    }
    REQUIRE_NOTHROW(v.check_invariants());
  }
  SECTION("hub surrogate agrees with the joint solve when there are no nodes") {
    ModelConfig m = pair_model();
    m.num_nodes = 0;
    m.request_probs = {0.5};
    m.rho_means = {2.0};
    m.lambda_in_means.clear();
    m.lambda_out_means.clear();
    SolverConfig scfg;
    scfg.num_samples = 20000;
    scfg.seed = 31;
    const PerNodeValues v = compute_per_node_values(m, scfg);
    const ValueTable t = value_iteration(m, scfg);
    // Both paths solve the same hub-only problem on their own sample sets, so
    // they agree up to Monte Carlo error in the sampled expectation.
    REQUIRE(v.v[0].first == Catch::Approx(t.values[0]).margin(0.3));
    REQUIRE(v.v[0].second == Catch::Approx(t.values[1]).margin(0.3));
  }
  SECTION("malformed surrogate values are rejected") {
    PerNodeValues bad;
    bad.v = {{1.0, 2.0}};  // holding costlier than empty
    REQUIRE_THROWS_AS(bad.check_invariants(), std::invalid_argument);
    REQUIRE_THROWS_AS(SeparablePolicy(bad, 0.9), std::invalid_argument);
  }
}

TEST_CASE("separable policy matches dp when the table really is separable", "[policies]") {
  // Against a synthetic joint table built as the sum of the two single-entity
  // tables, the joint minimization decomposes into the separable tests as
  // long as the hub holds the file (no inbound coupling term). On those
  // states the two policies must pick equally cheap actions.
  const ModelConfig m = pair_model();
  SolverConfig scfg;
  scfg.num_samples = 2000;
  scfg.seed = 41;
  const PerNodeValues per = compute_per_node_values(m, scfg);

  ValueTable synthetic;
  synthetic.num_entities = 2;
  synthetic.values.resize(4);
  for (std::uint32_t s = 0; s < 4; ++s) {
    const auto& [e0, h0] = per.v[0];
    const auto& [e1, h1] = per.v[1];
    synthetic.values[s] = ((s & 1u) ? h0 : e0) + ((s & 2u) ? h1 : e1);
  }

  const DpPolicy dp(synthetic, m.gamma);
  const SeparablePolicy sep(per, m.gamma);

  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const Exogenous exo = testutil::random_exo(m, rng);
    const std::uint32_t mask = 0b01u | (std::uint32_t(rng()) & 0b10u);  // hub always holds
    const StorageState s{mask, 2};
    const Action da = dp.decide(s, exo);
    const Action sa = sep.decide(s, exo);
    REQUIRE(is_feasible(s, exo, sa));
    const double dc = step_cost(exo, da) + m.gamma * synthetic.values[da.cache];
    const double sc = step_cost(exo, sa) + m.gamma * synthetic.values[sa.cache];
    REQUIRE(sc == Catch::Approx(dc).margin(1e-9));
  }
}

TEST_CASE("separable thresholds react to the surrogate gap", "[policies]") {
  PerNodeValues flat;
  flat.v = {{5.0, 5.0}, {5.0, 5.0}};
  const SeparablePolicy no_gain(flat, 0.9);
  Exogenous exo;
  exo.num_entities = 2;
  exo.requests = 0;
  exo.rho = {0.5, 0.5};
  exo.lambda_cloud = 3.0;
  exo.lambda_in = {2.0};
  exo.lambda_out = {2.5};
  // Equal surrogate values mean zero future credit: never cache.
  REQUIRE(no_gain.decide(StorageState{0b11u, 2}, exo).cache == 0u);

  PerNodeValues wide;
  wide.v = {{10.0, 0.0}, {10.0, 0.0}};
  const SeparablePolicy keen(wide, 0.9);
  // Gain 9 beats rho at a holder and even rho + delivery at a cold node.
  REQUIRE(keen.decide(StorageState{0b01u, 2}, exo).cache == 0b11u);
  exo.rho = {0.5, 7.0};
  // 7 + 2.5 > 9 at the cold node: only the hub keeps it.
  REQUIRE(keen.decide(StorageState{0b01u, 2}, exo).cache == 0b01u);
}

TEST_CASE("trivial baselines", "[policies]") {
  NeverCachePolicy never;
  AlwaysCachePolicy always;

  SECTION("never serves and drops") {
    const Action act = never.decide(StorageState{0u, 1}, hub_exo(0b1u, 0.01, 5.0));
    REQUIRE(act.fetch_cloud);
    REQUIRE(act.cache == 0u);
  }
  SECTION("always keeps without redundant fetches") {
    Exogenous exo;
    exo.num_entities = 3;
    exo.requests = 0;
    exo.rho = {1.0, 1.0, 1.0};
    exo.lambda_cloud = 5.0;
    exo.lambda_in = {2.0, 2.0};
    exo.lambda_out = {3.0, 3.0};
    const Action act = always.decide(StorageState{0b111u, 3}, exo);
    REQUIRE(act.cache == 0b111u);
    REQUIRE_FALSE(act.fetch_cloud);
    REQUIRE(act.fetch_from == 0u);
    REQUIRE(act.deliver_to == 0u);
  }
}

TEST_CASE("all policies produce feasible actions under fuzzing", "[policies]") {
  const ModelConfig m = pair_model();
  SolverConfig scfg;
  scfg.num_samples = 300;
  const BuiltPolicies built =
      build_policies({"dp", "myopic", "separable", "never", "always"}, m, scfg);

  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 1000; ++trial) {
    const Exogenous exo = testutil::random_exo(m, rng);
    const StorageState s{std::uint32_t(rng()) & 0b11u, 2};
    for (const auto& policy : built.list) {
      const Action act = policy->decide(s, exo);
      INFO("policy " << policy->name());
      REQUIRE(is_feasible(s, exo, act));
      const Action again = policy->decide(s, exo);
      REQUIRE(act == again);
    }
  }
}

TEST_CASE("policy construction by name", "[policies]") {
  const ModelConfig m = pair_model();
  SolverConfig scfg;
  scfg.num_samples = 200;

  const BuiltPolicies built = build_policies({"never", "dp", "dp"}, m, scfg);
  REQUIRE(built.list.size() == 3);
  REQUIRE(built.list[0]->name() == "never");
  REQUIRE(built.list[1]->name() == "dp");
  REQUIRE(built.table.has_value());
  REQUIRE(built.table->converged);
  REQUIRE(built.solver_converged);

  REQUIRE_THROWS_WITH(build_policies({"dp", "greedy"}, m, scfg),
                      Catch::Matchers::ContainsSubstring("unknown policy") &&
                          Catch::Matchers::ContainsSubstring("myopic"));
}

TEST_CASE("dp beats the trivial baselines where caching matters", "[policies]") {
  // Moderate fetch prices and steady demand: the optimal rule caches ahead of
  // requests while "never" pays the fetch price every time. The ordering must
  // show up well outside Monte Carlo noise on common random draws.
  ModelConfig m;
  m.num_nodes = 0;
  m.gamma = 0.9;
  m.request_probs = {0.5};
  m.rho_means = {2.0};
  m.lambda_cloud_mean = 30.0;
  SolverConfig scfg;
  scfg.num_samples = 2000;

  SimConfig sim;
  sim.num_trajectories = 2000;
  sim.seed = 61;

  const BuiltPolicies built = build_policies({"dp", "never", "always"}, m, scfg);
  std::vector<const Policy*> ptrs;
  for (const auto& p : built.list) ptrs.push_back(p.get());
  const CompareResult cmp = compare(m, ptrs, sim);

  REQUIRE(cmp.reports[0].policy == "dp");
  for (std::size_t k = 1; k < cmp.reports.size(); ++k)
    REQUIRE(cmp.reports[0].mean_discounted_cost <
            cmp.reports[k].mean_discounted_cost);
  // Paired differences: dp minus each baseline must sit below zero by a clear
  // confidence margin.
  for (const auto& pair : cmp.pairs) {
    if (pair.policy_a != "dp") continue;
    REQUIRE(pair.mean_diff < 0.0);
    REQUIRE(pair.mean_diff + 3.0 * pair.stderr_diff < 0.0);
  }
}
