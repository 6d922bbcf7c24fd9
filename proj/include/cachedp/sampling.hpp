#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cachedp/model.hpp"
#include "cachedp/util.hpp"

namespace cachedp {

/// Draw-space layout.
///
/// Every sampled scalar has its own one-shot substream keyed by
/// (seed, domain, draw_index * kDrawStride + field slot). Exactly one 64-bit
/// variate is consumed per field, so draws regenerate identically in any
/// order, serial or parallel, and fields shared between configs with
/// different node counts (hub request, hub caching price, cloud price) line
/// up draw for draw. Field slots within one draw:
///
///   request at entity m   -> m
///   rho at entity m       -> 64 + m
///   cloud fetch price     -> 128
///   inbound price node m  -> 192 + (m - 1)
///   outbound price node m -> 256 + (m - 1)
inline constexpr std::uint64_t kDrawStride = 320;
inline constexpr std::uint64_t kSlotRequest = 0;
inline constexpr std::uint64_t kSlotRho = 64;
inline constexpr std::uint64_t kSlotLambdaCloud = 128;
inline constexpr std::uint64_t kSlotLambdaIn = 192;
inline constexpr std::uint64_t kSlotLambdaOut = 256;

/// Domains keep the solver's draw space and the simulator's disjoint even
/// when both run from the same user-facing seed.
inline constexpr std::uint64_t kDomainSampleSet = 0xA1;
inline constexpr std::uint64_t kDomainSim = 0xB2;

/// Counter-based generator: a (seed, domain) pair addressing an unbounded
/// array of independent uniform variates.
struct DrawStream {
  std::uint64_t seed = 0;
  std::uint64_t domain = kDomainSampleSet;

  /// Uniform on [0, 1), determined entirely by (seed, domain, slot).
  double unit(std::uint64_t slot) const noexcept {
    const std::uint64_t base = detail::mix64(seed ^ (0xD1B54A32D192ED03ULL * (domain + 1)));
    const std::uint64_t x = detail::mix64(base ^ (0xEB44ACCAB455D165ULL * (slot + 1)));
    return static_cast<double>(x >> 11) * 0x1.0p-53;
  }
};

/// One slot's requests and prices under the configured law: requests are
/// Bernoulli(request_probs[m]), every price is uniform on [0, 2 * mean).
inline Exogenous sample_exogenous(const ModelConfig& cfg, const DrawStream& stream,
                                  std::uint64_t index) {
  const int e = cfg.num_entities();
  Exogenous exo;
  exo.num_entities = e;
  exo.rho.resize(static_cast<std::size_t>(e));
  exo.lambda_in.resize(static_cast<std::size_t>(cfg.num_nodes));
  exo.lambda_out.resize(static_cast<std::size_t>(cfg.num_nodes));
  const std::uint64_t b = index * kDrawStride;
  for (int m = 0; m < e; ++m)
    if (stream.unit(b + kSlotRequest + static_cast<std::uint64_t>(m)) < cfg.request_probs[m])
      exo.requests |= 1u << m;
  for (int m = 0; m < e; ++m)
    exo.rho[m] = stream.unit(b + kSlotRho + static_cast<std::uint64_t>(m)) * (2.0 * cfg.rho_means[m]);
  exo.lambda_cloud = stream.unit(b + kSlotLambdaCloud) * (2.0 * cfg.lambda_cloud_mean);
  for (int m = 1; m <= cfg.num_nodes; ++m) {
    exo.lambda_in[m - 1] =
        stream.unit(b + kSlotLambdaIn + static_cast<std::uint64_t>(m - 1)) *
        (2.0 * cfg.lambda_in_means[m - 1]);
    exo.lambda_out[m - 1] =
        stream.unit(b + kSlotLambdaOut + static_cast<std::uint64_t>(m - 1)) *
        (2.0 * cfg.lambda_out_means[m - 1]);
  }
  return exo;
}

/// A frozen batch of draws. The solver averages over one fixed set for every
/// state and iteration, which turns the sampled update into a deterministic
/// contraction.
struct SampleSet {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<Exogenous> draws;

  static SampleSet generate(const ModelConfig& cfg, std::size_t n, std::uint64_t seed) {
    cfg.validate();
    if (n == 0) throw std::invalid_argument("num_samples: must be >= 1");
    SampleSet out;
    out.seed = seed;
    out.config_hash = cfg.fingerprint();
    out.draws.reserve(n);
    const DrawStream stream{seed, kDomainSampleSet};
    for (std::size_t i = 0; i < n; ++i)
      out.draws.push_back(sample_exogenous(cfg, stream, i));
    return out;
  }

  bool matches(const ModelConfig& cfg, std::size_t n, std::uint64_t s) const {
    return s == seed && cfg.fingerprint() == config_hash && draws.size() == n;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["config_hash"] = hex64(config_hash);
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& d : draws) {
      nlohmann::json e;
      e["num_entities"] = d.num_entities;
      e["requests"] = d.requests;
      e["rho"] = d.rho;
      e["lambda_cloud"] = d.lambda_cloud;
      e["lambda_in"] = d.lambda_in;
      e["lambda_out"] = d.lambda_out;
      arr.push_back(std::move(e));
    }
    j["draws"] = std::move(arr);
    return j;
  }

  static SampleSet from_json(const nlohmann::json& j) {
    SampleSet out;
    out.seed = j.at("seed").get<std::uint64_t>();
    out.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    for (const auto& e : j.at("draws")) {
      Exogenous d;
      d.num_entities = e.at("num_entities").get<int>();
      d.requests = e.at("requests").get<std::uint32_t>();
      d.rho = e.at("rho").get<std::vector<double>>();
      d.lambda_cloud = e.at("lambda_cloud").get<double>();
      d.lambda_in = e.at("lambda_in").get<std::vector<double>>();
      d.lambda_out = e.at("lambda_out").get<std::vector<double>>();
      out.draws.push_back(std::move(d));
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    write_file_atomic(path, to_json().dump());
  }

  static SampleSet load(const std::filesystem::path& path) {
    return from_json(nlohmann::json::parse(read_text_file(path)));
  }

  /// Cache keyed by (seed, config_hash, n): reuse the file when it matches,
  /// else regenerate and overwrite it.
  static SampleSet load_or_generate(const ModelConfig& cfg, std::size_t n, std::uint64_t seed,
                                    const std::filesystem::path& path) {
    if (std::filesystem::exists(path)) {
      SampleSet cached = load(path);
      if (cached.matches(cfg, n, seed)) return cached;
    }
    SampleSet fresh = generate(cfg, n, seed);
    fresh.save(path);
    return fresh;
  }
};

}  // namespace cachedp
