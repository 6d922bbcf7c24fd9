#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cachedp/cachedp.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitFingerprint = 3;
constexpr int kExitNoConverge = 4;

struct FingerprintMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOpts {
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--seed", opts.seed, "Override both the solver and the simulation seed");
  cmd->add_option("--threads", opts.threads,
                  "Worker threads (0: CACHEDP_THREADS env, then hardware count)");
}

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

/// Everything but created_unix and duration_seconds is a pure function of the
/// invocation, so two runs of the same command differ only in those fields.
void write_manifest(const std::string& out_path, const std::string& command,
                    const nlohmann::json& invocation, const std::vector<std::string>& outputs,
                    const Timer& timer) {
  nlohmann::json j;
  j["tool"] = "cachedp";
  j["version"] = cachedp::kVersion;
  j["command"] = command;
  j["invocation"] = invocation;
  j["outputs"] = outputs;
  j["created_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
  j["duration_seconds"] = timer.seconds();
  cachedp::write_file_atomic(out_path, j.dump(2) + "\n");
}

nlohmann::json run_invocation(const cachedp::RunConfig& cfg, unsigned threads) {
  nlohmann::json j;
  j["config"] = cachedp::dump_run_config(cfg);
  j["config_hash"] = cachedp::hex64(cfg.model.fingerprint());
  j["solver_seed"] = cfg.solver.seed;
  j["sim_seed"] = cfg.sim.seed;
  j["threads"] = threads;
  return j;
}

void emit(const std::string& out_path, const std::string& command, const nlohmann::json& invocation,
          const std::string& content, const Timer& timer) {
  if (out_path.empty()) {
    std::cout << content;
    return;
  }
  cachedp::write_file_atomic(out_path, content);
  write_manifest(out_path + ".manifest.json", command, invocation, {out_path}, timer);
}

cachedp::ValueTable load_table_any(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open value table '" + path + "'");
  char magic[8] = {};
  in.read(magic, sizeof magic);
  in.close();
  if (std::string_view(magic, 8) == "CDPVTB01") return cachedp::ValueTable::load_binary(path);
  return cachedp::ValueTable::load_json(path);
}

struct SimulateDeps {
  std::vector<std::unique_ptr<cachedp::Policy>> policies;
  bool solver_converged = true;
};

/// Builds the named policies, loading a precomputed table for dp when one is
/// given. The table must have been solved for this exact model.
SimulateDeps build_for_run(const std::vector<std::string>& names, const cachedp::RunConfig& cfg,
                           const std::string& table_path, unsigned threads) {
  SimulateDeps deps;
  if (!table_path.empty()) {
    cachedp::ValueTable table = load_table_any(table_path);
    if (table.config_hash != cfg.model.fingerprint())
      throw FingerprintMismatch("value table '" + table_path + "' was solved for config " +
                                cachedp::hex64(table.config_hash) + ", expected " +
                                cachedp::hex64(cfg.model.fingerprint()));
    for (const auto& name : names) {
      if (name == "dp") {
        deps.policies.push_back(std::make_unique<cachedp::DpPolicy>(table, cfg.model.gamma));
      } else {
        cachedp::BuiltPolicies one = cachedp::build_policies({name}, cfg.model, cfg.solver, threads);
        deps.solver_converged = deps.solver_converged && one.solver_converged;
        deps.policies.push_back(std::move(one.list.front()));
      }
    }
    return deps;
  }
  cachedp::BuiltPolicies built = cachedp::build_policies(names, cfg.model, cfg.solver, threads);
  deps.policies = std::move(built.list);
  deps.solver_converged = built.solver_converged;
  return deps;
}

int run_solve(const std::string& config_path, const std::string& out_json,
              const std::string& out_binary, bool trace, const CommonOpts& common) {
  const Timer timer;
  cachedp::RunConfig cfg = cachedp::load_run_config(config_path);
  if (common.seed) cfg.solver.seed = *common.seed;
  const unsigned threads = cachedp::resolve_threads(common.threads);

  cachedp::SolveOptions opts;
  opts.threads = threads;
  if (trace)
    opts.on_iteration = [](int iter, double residual, const std::vector<double>&) {
      std::cerr << "iteration " << iter << " residual " << cachedp::format_double(residual)
                << "\n";
    };
  const cachedp::ValueTable table = cachedp::value_iteration(cfg.model, cfg.solver, opts);

  std::vector<std::string> outputs;
  if (!out_json.empty()) {
    table.save_json(out_json);
    outputs.push_back(out_json);
  }
  if (!out_binary.empty()) {
    table.save_binary(out_binary);
    outputs.push_back(out_binary);
  }
  if (!outputs.empty()) {
    nlohmann::json invocation = run_invocation(cfg, threads);
    write_manifest(outputs.front() + ".manifest.json", "solve", invocation, outputs, timer);
  }

  nlohmann::json summary;
  summary["states"] = cfg.model.num_states();
  summary["iterations"] = table.iterations;
  summary["residual"] = table.residual;
  summary["epsilon"] = cfg.solver.effective_epsilon(cfg.model);
  summary["converged"] = table.converged;
  summary["config_hash"] = cachedp::hex64(table.config_hash);
  std::cout << summary.dump(2) << "\n";
  if (!table.converged) {
    std::cerr << "solver stopped at the iteration cap with residual "
              << cachedp::format_double(table.residual) << "\n";
    return kExitNoConverge;
  }
  return kExitOk;
}

int run_simulate(const std::string& config_path, const std::string& policy,
                 const std::string& table_path, const std::string& out_path,
                 const std::string& format, const CommonOpts& common) {
  const Timer timer;
  cachedp::RunConfig cfg = cachedp::load_run_config(config_path);
  if (common.seed) {
    cfg.solver.seed = *common.seed;
    cfg.sim.seed = *common.seed;
  }
  const unsigned threads = cachedp::resolve_threads(common.threads);

  SimulateDeps deps = build_for_run({policy}, cfg, table_path, threads);
  const cachedp::SimReport rep =
      cachedp::simulate(cfg.model, *deps.policies.front(), cfg.sim, threads);

  std::string content;
  if (format == "csv")
    content = std::string(cachedp::SimReport::csv_header()) + "\n" + rep.csv_row() + "\n";
  else
    content = rep.to_json().dump(2) + "\n";
  emit(out_path, "simulate", run_invocation(cfg, threads), content, timer);
  return deps.solver_converged ? kExitOk : kExitNoConverge;
}

int run_compare(const std::string& config_path, const std::vector<std::string>& policies,
                const std::string& table_path, const std::string& out_path,
                const std::string& format, const CommonOpts& common) {
  const Timer timer;
  cachedp::RunConfig cfg = cachedp::load_run_config(config_path);
  if (common.seed) {
    cfg.solver.seed = *common.seed;
    cfg.sim.seed = *common.seed;
  }
  const unsigned threads = cachedp::resolve_threads(common.threads);

  SimulateDeps deps = build_for_run(policies, cfg, table_path, threads);
  std::vector<const cachedp::Policy*> ptrs;
  for (const auto& p : deps.policies) ptrs.push_back(p.get());
  const cachedp::CompareResult result = cachedp::compare(cfg.model, ptrs, cfg.sim, threads);

  std::string content;
  if (format == "csv") {
    content = std::string(cachedp::SimReport::csv_header()) + "\n";
    for (const auto& rep : result.reports) content += rep.csv_row() + "\n";
  } else {
    content = result.to_json().dump(2) + "\n";
  }
  emit(out_path, "compare", run_invocation(cfg, threads), content, timer);
  return deps.solver_converged ? kExitOk : kExitNoConverge;
}

int run_sweep_cmd(const std::string& experiment, const std::string& spec_path,
                  std::string out_path, std::string jsonl_path, const std::string& out_dir,
                  const std::string& format, std::optional<int> trajectories,
                  std::optional<int> samples, std::optional<int> horizon, bool progress,
                  const CommonOpts& common) {
  const Timer timer;
  cachedp::SweepSpec spec =
      spec_path.empty() ? cachedp::builtin_experiment(experiment) : cachedp::load_sweep_spec(spec_path);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::filesystem::path base = std::filesystem::path(out_dir) / spec.name;
    out_path = (base.string() + ".csv");
    jsonl_path = (base.string() + ".jsonl");
  }
  if (common.seed) {
    spec.solver.seed = *common.seed;
    spec.sim.seed = *common.seed;
  }
  if (trajectories) spec.sim.num_trajectories = *trajectories;
  if (samples) spec.solver.num_samples = *samples;
  if (horizon) spec.sim.horizon = *horizon;
  const unsigned threads = cachedp::resolve_threads(common.threads);

  std::function<void(std::size_t, std::size_t)> on_cell;
  if (progress)
    on_cell = [](std::size_t done, std::size_t total) {
      std::cerr << "cell " << done << "/" << total << "\n";
    };
  const cachedp::SweepResult result = cachedp::run_sweep(spec, threads, on_cell);

  nlohmann::json invocation;
  invocation["experiment"] = spec.name;
  invocation["solver_seed"] = spec.solver.seed;
  invocation["sim_seed"] = spec.sim.seed;
  invocation["threads"] = threads;
  invocation["trajectories"] = spec.sim.num_trajectories;
  invocation["samples"] = spec.solver.num_samples;

  emit(out_path, "sweep", invocation,
       format == "json" && out_path.empty() ? cachedp::sweep_jsonl(result)
                                            : cachedp::sweep_csv(result),
       timer);
  if (!jsonl_path.empty()) {
    cachedp::write_file_atomic(jsonl_path, cachedp::sweep_jsonl(result));
    write_manifest(jsonl_path + ".manifest.json", "sweep", invocation, {jsonl_path}, timer);
  }
  if (!result.all_converged) {
    std::cerr << "one or more cells stopped at the iteration cap; see the jsonl rows\n";
    return kExitNoConverge;
  }
  return kExitOk;
}

int run_validate(const std::string& config_path, const std::string& spec_path) {
  if (!spec_path.empty()) {
    const cachedp::SweepSpec spec = cachedp::load_sweep_spec(spec_path);
    const std::size_t cells =
        spec.axis1.values.size() * (spec.axis2 ? spec.axis2->values.size() : 1);
    std::cout << "ok\n";
    std::cout << "name " << spec.name << "\n";
    std::cout << "cells " << cells << "\n";
    std::cout << "rows " << cells * spec.policies.size() * spec.metrics.size() << "\n";
    return kExitOk;
  }
  const cachedp::RunConfig cfg = cachedp::load_run_config(config_path);
  std::cout << "ok\n";
  std::cout << "config_hash " << cachedp::hex64(cfg.model.fingerprint()) << "\n";
  std::cout << "entities " << cfg.model.num_entities() << "\n";
  std::cout << "states " << cfg.model.num_states() << "\n";
  std::cout << "epsilon " << cachedp::format_double(cfg.solver.effective_epsilon(cfg.model))
            << "\n";
  std::cout << "horizon " << cfg.sim.effective_horizon(cfg.model.gamma) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Solver and simulator for hub-and-node fetch-or-cache planning"};
  app.set_version_flag("--version", std::string(cachedp::kVersion));
  app.require_subcommand(1);

  CommonOpts solve_common;
  std::string solve_config, solve_out, solve_out_binary;
  bool solve_trace = false;
  CLI::App* solve = app.add_subcommand("solve", "Run value iteration and report convergence");
  solve->add_option("--config", solve_config, "Run config file")->required();
  solve->add_option("--out", solve_out, "Write the value table as JSON");
  solve->add_option("--out-binary", solve_out_binary, "Write the value table in binary form");
  solve->add_flag("--trace", solve_trace, "Print per-iteration residuals to stderr");
  add_common(solve, solve_common);

  CommonOpts sim_common;
  std::string sim_config, sim_policy, sim_table, sim_out, sim_format = "json";
  CLI::App* simulate = app.add_subcommand("simulate", "Roll a policy forward and summarize costs");
  simulate->add_option("--config", sim_config, "Run config file")->required();
  simulate->add_option("--policy", sim_policy, "Policy name")
      ->required()
      ->check(CLI::IsMember(cachedp::policy_names()));
  simulate->add_option("--table", sim_table, "Precomputed value table for dp");
  simulate->add_option("--out", sim_out, "Write the report here instead of stdout");
  simulate->add_option("--format", sim_format, "Output format")
      ->check(CLI::IsMember({"csv", "json"}));
  add_common(simulate, sim_common);

  CommonOpts cmp_common;
  std::string cmp_config, cmp_table, cmp_out, cmp_format = "json";
  std::vector<std::string> cmp_policies;
  CLI::App* compare = app.add_subcommand("compare", "Run several policies on shared draws");
  compare->add_option("--config", cmp_config, "Run config file")->required();
  compare->add_option("--policies", cmp_policies, "Comma-separated policy names")
      ->required()
      ->delimiter(',');
  compare->add_option("--table", cmp_table, "Precomputed value table for dp");
  compare->add_option("--out", cmp_out, "Write the comparison here instead of stdout");
  compare->add_option("--format", cmp_format, "Output format (csv drops the paired differences)")
      ->check(CLI::IsMember({"csv", "json"}));
  add_common(compare, cmp_common);

  CommonOpts sweep_common;
  std::string sweep_experiment, sweep_spec, sweep_out, sweep_jsonl_path, sweep_dir;
  std::string sweep_format = "csv";
  std::optional<int> sweep_traj, sweep_samples, sweep_horizon;
  bool sweep_list = false, sweep_progress = false;
  CLI::App* sweep = app.add_subcommand("sweep", "Evaluate a metric over a parameter grid");
  CLI::Option* exp_opt =
      sweep->add_option("--experiment", sweep_experiment, "Built-in experiment name");
  CLI::Option* spec_opt = sweep->add_option("--spec", sweep_spec, "Sweep spec file");
  exp_opt->excludes(spec_opt);
  sweep->add_option("--out", sweep_out, "Write CSV here instead of stdout");
  sweep->add_option("--jsonl", sweep_jsonl_path, "Also write one JSON row per line here");
  sweep->add_option("--out-dir", sweep_dir, "Write <name>.csv, <name>.jsonl, manifest into this directory");
  sweep->add_option("--format", sweep_format, "Stdout format when --out is absent")
      ->check(CLI::IsMember({"csv", "json"}));
  sweep->add_option("--trajectories", sweep_traj, "Override the trajectory count");
  sweep->add_option("--samples", sweep_samples, "Override the solver sample count");
  sweep->add_option("--horizon", sweep_horizon, "Override the rollout horizon");
  sweep->add_flag("--list", sweep_list, "List built-in experiments and exit");
  sweep->add_flag("--progress", sweep_progress, "Report cell completion to stderr");
  add_common(sweep, sweep_common);

  std::string val_config, val_spec;
  CLI::App* validate = app.add_subcommand("validate", "Check a config or sweep spec");
  CLI::Option* val_cfg_opt = validate->add_option("--config", val_config, "Run config file");
  CLI::Option* val_spec_opt = validate->add_option("--spec", val_spec, "Sweep spec file");
  val_cfg_opt->excludes(val_spec_opt);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*solve) return run_solve(solve_config, solve_out, solve_out_binary, solve_trace, solve_common);
    if (*simulate)
      return run_simulate(sim_config, sim_policy, sim_table, sim_out, sim_format, sim_common);
    if (*compare)
      return run_compare(cmp_config, cmp_policies, cmp_table, cmp_out, cmp_format, cmp_common);
    if (*sweep) {
      if (sweep_list) {
        for (const auto& name : cachedp::builtin_experiment_names()) std::cout << name << "\n";
        return kExitOk;
      }
      if (sweep_experiment.empty() == sweep_spec.empty()) {
        std::cerr << "sweep: pass exactly one of --experiment or --spec (see --list)\n";
        return kExitConfig;
      }
      return run_sweep_cmd(sweep_experiment, sweep_spec, sweep_out, sweep_jsonl_path, sweep_dir,
                           sweep_format, sweep_traj, sweep_samples, sweep_horizon, sweep_progress,
                           sweep_common);
    }
    if (*validate) {
      if (val_config.empty() == val_spec.empty()) {
        std::cerr << "validate: pass exactly one of --config or --spec\n";
        return kExitConfig;
      }
      return run_validate(val_config, val_spec);
    }
  } catch (const FingerprintMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFingerprint;
  } catch (const cachedp::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
