#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "llpdc_cli.hpp"

namespace {

using namespace llpdc::cli;

// LLPDC_LOG selects error, info (default) or debug.
bool configure_logging() {
  auto logger = spdlog::stderr_logger_mt("llpdc");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("LLPDC_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info" || level.empty()) {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    std::cerr << "error: LLPDC_LOG must be one of error, info, debug\n";
    return false;
  }
  return true;
}

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> bag_size;
};

void add_run_flags(CLI::App* cmd, RunFlags& flags) {
  cmd->add_option("--config", flags.config, "JSON run configuration");
  cmd->add_option("--seed", flags.seed, "seed for data, bags and training");
  cmd->add_option("--out", flags.out, "output directory");
  cmd->add_option("--bag-size", flags.bag_size, "instances per bag");
}

RunConfig resolve(const RunFlags& flags, const Overrides& extra) {
  RunConfig config = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
  Overrides o = extra;
  o.seed = flags.seed;
  o.out = flags.out;
  o.bag_size = flags.bag_size;
  apply_overrides(config, o);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  if (!configure_logging()) return kUsageError;

  CLI::App app{"llpdc: learning from label proportions with dual proportion constraints"};
  app.require_subcommand(1);

  std::string assign_input, assign_output;
  auto* assign = app.add_subcommand("assign", "proportion-exact pseudo-labels for one bag");
  assign->add_option("input", assign_input, "request JSON with probs and alpha ('-' for stdin)")->required();
  assign->add_option("-o,--output", assign_output, "write the result here instead of stdout");

  RunFlags train_flags;
  std::optional<double> train_lambda, train_tau;
  auto* train = app.add_subcommand("train", "train a classifier from bags");
  add_run_flags(train, train_flags);
  train->add_option("--lambda", train_lambda, "instance-loss weight");
  train->add_option("--tau", train_tau, "confidence threshold");

  RunFlags sweep_flags;
  std::vector<double> sweep_lambda, sweep_tau;
  std::optional<std::size_t> sweep_workers;
  auto* sweep = app.add_subcommand("sweep", "train over a lambda x tau grid");
  add_run_flags(sweep, sweep_flags);
  sweep->add_option("--lambda", sweep_lambda, "lambda values")->delimiter(',');
  sweep->add_option("--tau", sweep_tau, "tau values")->delimiter(',');
  sweep->add_option("--workers", sweep_workers, "parallel cells");

  std::size_t oracle_trials = 1000, oracle_max_m = 8, oracle_max_l = 4;
  std::uint64_t oracle_seed = 0;
  std::string oracle_out;
  auto* oracle = app.add_subcommand("oracle-check", "compare the flow solver with exhaustive enumeration");
  oracle->add_option("--trials", oracle_trials, "random instances")->capture_default_str();
  oracle->add_option("--max-m", oracle_max_m, "largest bag size")->capture_default_str();
  oracle->add_option("--max-l", oracle_max_l, "largest class count")->capture_default_str();
  oracle->add_option("--seed", oracle_seed, "RNG seed")->capture_default_str();
  oracle->add_option("--out", oracle_out, "directory for the failing instance");

  std::vector<std::size_t> bench_m{16, 32, 64, 128}, bench_l{10};
  std::size_t bench_repeats = 5;
  std::uint64_t bench_seed = 0;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "time the assignment solver");
  bench->add_option("--m", bench_m, "bag sizes")->delimiter(',')->capture_default_str();
  bench->add_option("--l", bench_l, "class counts")->delimiter(',')->capture_default_str();
  bench->add_option("--repeats", bench_repeats, "instances per point")->capture_default_str();
  bench->add_option("--seed", bench_seed, "RNG seed")->capture_default_str();
  bench->add_option("--out", bench_out, "directory for bench.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*assign) return cmd_assign(assign_input, assign_output, std::cout, std::cerr);
    if (*train) {
      Overrides o;
      o.lambda = train_lambda;
      o.tau = train_tau;
      return cmd_train(resolve(train_flags, o), std::cout, std::cerr);
    }
    if (*sweep) {
      Overrides o;
      o.workers = sweep_workers;
      RunConfig config = resolve(sweep_flags, o);
      if (!sweep_lambda.empty()) config.sweep.lambda = sweep_lambda;
      if (!sweep_tau.empty()) config.sweep.tau = sweep_tau;
      return cmd_sweep(config, std::cout, std::cerr);
    }
    if (*oracle)
      return cmd_oracle_check(oracle_trials, oracle_max_m, oracle_max_l, oracle_seed, oracle_out, std::cout, std::cerr);
    if (*bench) return cmd_bench(bench_m, bench_l, bench_repeats, bench_seed, bench_out, std::cout, std::cerr);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}
