#include "test_helpers.hpp"

using namespace cachedp;

namespace {

ModelConfig priced_model() {
  ModelConfig m;
  m.num_nodes = 2;
  m.gamma = 0.9;
  m.request_probs = {0.5, 0.3, 0.7};
  m.rho_means = {10.0, 2.0, 4.0};
  m.lambda_cloud_mean = 6.0;
  m.lambda_in_means = {3.0, 5.0};
  m.lambda_out_means = {7.0, 1.5};
  return m;
}

}  // namespace

TEST_CASE("draw stream is deterministic and uniform on [0, 1)", "[sampling]") {
  const DrawStream a{42, kDomainSampleSet};
  const DrawStream b{42, kDomainSampleSet};
  double lo = 1.0, hi = 0.0, sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = a.unit(std::uint64_t(i));
    REQUIRE(x == b.unit(std::uint64_t(i)));
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
  }
  REQUIRE(sum / n == Catch::Approx(0.5).margin(3.0 / std::sqrt(12.0 * n)));
  REQUIRE(lo < 0.01);
  REQUIRE(hi > 0.99);

  const DrawStream other_seed{43, kDomainSampleSet};
  const DrawStream other_domain{42, kDomainSim};
  REQUIRE(a.unit(0) != other_seed.unit(0));
  REQUIRE(a.unit(0) != other_domain.unit(0));
}

TEST_CASE("sample set generation is reproducible and seed sensitive", "[sampling]") {
  const ModelConfig m = priced_model();
  const SampleSet a = SampleSet::generate(m, 100, 7);
  const SampleSet b = SampleSet::generate(m, 100, 7);
  REQUIRE(a.draws.size() == 100);
  REQUIRE(a.config_hash == m.fingerprint());
  for (std::size_t i = 0; i < a.draws.size(); ++i) {
    REQUIRE(a.draws[i].requests == b.draws[i].requests);
    REQUIRE(a.draws[i].rho == b.draws[i].rho);
    REQUIRE(a.draws[i].lambda_cloud == b.draws[i].lambda_cloud);
    REQUIRE(a.draws[i].lambda_in == b.draws[i].lambda_in);
    REQUIRE(a.draws[i].lambda_out == b.draws[i].lambda_out);
  }

  const SampleSet c = SampleSet::generate(m, 100, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.draws.size(); ++i)
    if (a.draws[i].rho != c.draws[i].rho) any_diff = true;
  REQUIRE(any_diff);

  REQUIRE_THROWS_AS(SampleSet::generate(m, 0, 7), std::invalid_argument);
}

TEST_CASE("degenerate distributions collapse to their support", "[sampling]") {
  ModelConfig m = priced_model();
  m.request_probs = {1.0, 0.0, 1.0};
  m.rho_means = {0.0, 0.0, 0.0};
  const SampleSet s = SampleSet::generate(m, 500, 3);
  for (const auto& d : s.draws) {
    REQUIRE(d.requests == 0b101u);
    REQUIRE(d.rho == std::vector<double>{0.0, 0.0, 0.0});
    REQUIRE(d.lambda_cloud >= 0.0);
    REQUIRE(d.lambda_cloud < 12.0);
  }
}

TEST_CASE("empirical moments match the configured law", "[sampling]") {
  const ModelConfig m = priced_model();
  const std::size_t n = 100000;
  const SampleSet s = SampleSet::generate(m, n, 11);

  // A Uniform[0, 2u) mean estimate has sd = 2u / sqrt(12 n); Bernoulli(p) has
  // sd = sqrt(p (1 - p) / n). Eleven statistics are checked at once, so the
  // band is 4 standard errors; a law wrong by even 1% of a mean sits past 5.
  auto within = [&](double got, double want, double sd) {
    REQUIRE(got == Catch::Approx(want).margin(4.0 * sd + 1e-12));
  };

  for (int e = 0; e < 3; ++e) {
    double freq = 0.0, rho_mean = 0.0;
    for (const auto& d : s.draws) {
      freq += d.requested(e) ? 1.0 : 0.0;
      rho_mean += d.rho[std::size_t(e)];
    }
    freq /= double(n);
    rho_mean /= double(n);
    const double p = m.request_probs[std::size_t(e)];
    within(freq, p, std::sqrt(p * (1 - p) / double(n)));
    const double u = m.rho_means[std::size_t(e)];
    within(rho_mean, u, 2.0 * u / std::sqrt(12.0 * double(n)));
  }

  double cloud = 0.0;
  for (const auto& d : s.draws) cloud += d.lambda_cloud;
  within(cloud / double(n), 6.0, 12.0 / std::sqrt(12.0 * double(n)));

  for (int k = 0; k < 2; ++k) {
    double in_mean = 0.0, out_mean = 0.0;
    for (const auto& d : s.draws) {
      in_mean += d.lambda_in[std::size_t(k)];
      out_mean += d.lambda_out[std::size_t(k)];
    }
    within(in_mean / double(n), m.lambda_in_means[std::size_t(k)],
           2.0 * m.lambda_in_means[std::size_t(k)] / std::sqrt(12.0 * double(n)));
    within(out_mean / double(n), m.lambda_out_means[std::size_t(k)],
           2.0 * m.lambda_out_means[std::size_t(k)] / std::sqrt(12.0 * double(n)));
  }
}

TEST_CASE("hub price mean lands tight at desk scale", "[sampling]") {
  ModelConfig m = priced_model();
  m.num_nodes = 0;
  m.request_probs = {0.5};
  m.rho_means = {10.0};
  m.lambda_in_means.clear();
  m.lambda_out_means.clear();
  const std::size_t n = 1000000;
  const DrawStream stream{101, kDomainSampleSet};
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += sample_exogenous(m, stream, i).rho[0];
  REQUIRE(sum / double(n) == Catch::Approx(10.0).margin(0.05));
}

TEST_CASE("fields are pairwise uncorrelated", "[sampling]") {
  const ModelConfig m = priced_model();
  const std::size_t n = 100000;
  const SampleSet s = SampleSet::generate(m, n, 13);
  double mr = 0.0, mc = 0.0;
  for (const auto& d : s.draws) {
    mr += d.rho[0];
    mc += d.lambda_cloud;
  }
  mr /= double(n);
  mc /= double(n);
  double cov = 0.0, vr = 0.0, vc = 0.0;
  for (const auto& d : s.draws) {
    cov += (d.rho[0] - mr) * (d.lambda_cloud - mc);
    vr += (d.rho[0] - mr) * (d.rho[0] - mr);
    vc += (d.lambda_cloud - mc) * (d.lambda_cloud - mc);
  }
  REQUIRE(std::abs(cov / std::sqrt(vr * vc)) < 0.02);
}

TEST_CASE("shared fields line up across node counts", "[sampling]") {
  // Adding nodes must not shift the hub's substreams: the hub request, hub
  // caching price, and cloud price of draw i agree between M=1 and M=2.
  ModelConfig small = priced_model();
  small.num_nodes = 1;
  small.request_probs = {0.5, 0.3};
  small.rho_means = {10.0, 2.0};
  small.lambda_in_means = {3.0};
  small.lambda_out_means = {7.0};
  const ModelConfig big = priced_model();

  const SampleSet a = SampleSet::generate(small, 200, 17);
  const SampleSet b = SampleSet::generate(big, 200, 17);
  for (std::size_t i = 0; i < 200; ++i) {
    REQUIRE(a.draws[i].requested(0) == b.draws[i].requested(0));
    REQUIRE(a.draws[i].requested(1) == b.draws[i].requested(1));
    REQUIRE(a.draws[i].rho[0] == b.draws[i].rho[0]);
    REQUIRE(a.draws[i].rho[1] == b.draws[i].rho[1]);
    REQUIRE(a.draws[i].lambda_cloud == b.draws[i].lambda_cloud);
    REQUIRE(a.draws[i].lambda_in[0] == b.draws[i].lambda_in[0]);
    REQUIRE(a.draws[i].lambda_out[0] == b.draws[i].lambda_out[0]);
  }
}

TEST_CASE("sample sets round-trip through the cache file", "[sampling]") {
  const ModelConfig m = priced_model();
  const SampleSet orig = SampleSet::generate(m, 50, 19);
  testutil::TempDir tmp;
  const auto path = tmp.file("samples.json");
  orig.save(path);

  const SampleSet back = SampleSet::load(path);
  REQUIRE(back.seed == orig.seed);
  REQUIRE(back.config_hash == orig.config_hash);
  REQUIRE(back.draws.size() == orig.draws.size());
  for (std::size_t i = 0; i < orig.draws.size(); ++i) {
    REQUIRE(back.draws[i].requests == orig.draws[i].requests);
    REQUIRE(back.draws[i].rho == orig.draws[i].rho);
    REQUIRE(back.draws[i].lambda_cloud == orig.draws[i].lambda_cloud);
    REQUIRE(back.draws[i].lambda_in == orig.draws[i].lambda_in);
    REQUIRE(back.draws[i].lambda_out == orig.draws[i].lambda_out);
  }
}

TEST_CASE("cached sample files regenerate when the key changes", "[sampling]") {
  const ModelConfig m = priced_model();
  testutil::TempDir tmp;
  const auto path = tmp.file("samples.json");

  const SampleSet first = SampleSet::load_or_generate(m, 50, 23, path);
  REQUIRE(std::filesystem::exists(path));
  const SampleSet reused = SampleSet::load_or_generate(m, 50, 23, path);
  REQUIRE(reused.draws[0].rho == first.draws[0].rho);

  // Different seed: the cache must not be served stale.
  const SampleSet reseeded = SampleSet::load_or_generate(m, 50, 24, path);
  REQUIRE(reseeded.seed == 24);
  REQUIRE(reseeded.draws[0].rho != first.draws[0].rho);

  // Different model: fingerprint mismatch forces regeneration.
  ModelConfig changed = m;
  changed.gamma = 0.5;
  const SampleSet refreshed = SampleSet::load_or_generate(changed, 50, 24, path);
  REQUIRE(refreshed.config_hash == changed.fingerprint());
}
