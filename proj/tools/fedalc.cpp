// fedalc command line: run experiments, check gradients, inspect partitions.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedalc/error.hpp"
#include "fedalc/harness.hpp"
#include "fedalc/kernels.hpp"

using namespace fedalc;

namespace {

struct CommonFlags {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  ConfigOverrides overrides;
};

// Options that map onto config keys are collected in command-line order.
void add_override(CLI::App* cmd, CommonFlags& flags, const std::string& flag, const std::string& key,
                  const std::string& help) {
  cmd->add_option_function<std::string>(
      flag, [&flags, key](const std::string& v) { flags.overrides.emplace_back(key, v); }, help);
}

ConfigOverrides resolve_overrides(const CommonFlags& flags) {
  ConfigOverrides out = flags.overrides;
  for (const auto& kv : flags.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out.emplace_back(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return out;
}

std::optional<std::filesystem::path> config_path(const CommonFlags& flags) {
  if (!flags.config) return std::nullopt;
  return std::filesystem::path(*flags.config);
}

int cmd_run(const CommonFlags& flags, bool quiet) {
  const ExperimentConfig cfg = parse_config(config_path(flags), resolve_overrides(flags));
  const ExperimentResult result = run_experiment(cfg, quiet ? nullptr : &std::cerr);
  std::cout << kCsvHeader << '\n' << csv_row(result.summary) << '\n';
  if (!cfg.out.empty()) std::cerr << "wrote " << cfg.out.string() << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t cases, double h, double tol) {
  const auto results = gradcheck_suite(seed, cases, h, tol);
  double worst = 0.0;
  int failed = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    worst = std::max(worst, r.report.max_rel);
    if (!r.report.passed) ++failed;
    std::printf("%3zu %s  max_rel=%.3e  %s\n", i, r.report.passed ? "ok  " : "FAIL", r.report.max_rel,
                r.description.c_str());
  }
  std::printf("%zu cases, %d failed, worst relative error %.3e (tolerance %.1e)\n", results.size(), failed, worst,
              tol);
  return failed == 0 ? 0 : 1;
}

int cmd_partition_stats(const CommonFlags& flags) {
  const ExperimentConfig cfg = parse_config(config_path(flags), resolve_overrides(flags));
  const LoadedData data = load_data(cfg);
  const Partition p = make_partition(cfg, data.train);
  const auto hist = client_histograms(p, data.train.labels, data.train.classes);

  std::printf("dataset %s, %zu samples, %zu clients, alpha %g, seed %llu\n", cfg.dataset.c_str(),
              data.train.size(), p.num_clients(), cfg.alpha, static_cast<unsigned long long>(cfg.fed.seed));
  std::printf("client   size |");
  for (std::size_t c = 0; c < data.train.classes; ++c) std::printf(" %6zu", c);
  std::printf("\n");
  for (std::size_t i = 0; i < hist.size(); ++i) {
    std::printf("%6zu %6zu |", i, p.clients[i].size());
    for (std::size_t n : hist[i]) std::printf(" %6zu", n);
    std::printf("\n");
  }
  std::printf("mean TV distance from uniform: %.6f\n",
              mean_tv_from_uniform(p, data.train.labels, data.train.classes));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated adversarial training with per-batch logit calibration"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Train and write per-round metrics as CSV");
  run->add_option("--config", run_flags.config, "key = value configuration file");
  add_override(run, run_flags, "--dataset", "dataset", "mnist | fashion_mnist | synthetic");
  add_override(run, run_flags, "--algo", "algo", "fedavg_at | fedprox_at | fedalc");
  add_override(run, run_flags, "--alpha", "alpha", "Dirichlet concentration");
  add_override(run, run_flags, "--rounds", "rounds", "communication rounds");
  add_override(run, run_flags, "--clients", "clients", "number of clients");
  add_override(run, run_flags, "--seed", "seed", "run seed");
  add_override(run, run_flags, "--out", "out", "CSV output path");
  add_override(run, run_flags, "--threads", "threads", "OpenMP threads (0 = default)");
  run->add_option("--set", run_flags.sets, "override any config key, key=value (repeatable)");
  run->add_flag("-q,--quiet", quiet, "no per-round progress on stderr");

  std::uint64_t gc_seed = 1;
  std::size_t gc_cases = 50;
  double gc_h = 1e-5, gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of analytic gradients");
  gradcheck->add_option("--seed", gc_seed, "seed for the random models");
  gradcheck->add_option("--cases", gc_cases, "number of random models")->check(CLI::PositiveNumber);
  gradcheck->add_option("--step", gc_h, "central-difference step");
  gradcheck->add_option("--tol", gc_tol, "relative error tolerance");

  CommonFlags ps_flags;
  auto* pstats = app.add_subcommand("partition-stats", "Print per-client class histograms of a Dirichlet split");
  pstats->add_option("--config", ps_flags.config, "key = value configuration file");
  add_override(pstats, ps_flags, "--dataset", "dataset", "mnist | fashion_mnist | synthetic");
  add_override(pstats, ps_flags, "--alpha", "alpha", "Dirichlet concentration");
  add_override(pstats, ps_flags, "--seed", "seed", "partition seed");
  add_override(pstats, ps_flags, "--clients", "clients", "number of clients");
  pstats->add_option("--set", ps_flags.sets, "override any config key, key=value (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(run_flags, quiet);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_cases, gc_h, gc_tol);
    if (*pstats) return cmd_partition_stats(ps_flags);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
