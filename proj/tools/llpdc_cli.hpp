#pragma once

// Subcommands behind the llpdc executable. Each returns a process exit code:
// 0 on success, 1 when a check fails, 2 on a usage or configuration error.
// User-facing results go to `out`; diagnostics go to `err` and the log.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "llpdc/io.hpp"
#include "llpdc/llpdc.hpp"

namespace llpdc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsageError = 2 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::size_t classes = 4;
  std::size_t dim = 16;
  std::size_t n_per_class = 1280;
  double separation = 2.0;
  std::size_t test_count = 1024;
  std::uint64_t seed = 1;
  std::string train_csv;
  std::string test_csv;
  std::size_t label_base = 1;
  bool has_header = false;
  std::string delimiter = ",";
};

struct BagConfig {
  std::size_t bag_size = 64;
  std::vector<std::size_t> sizes;
  bool drop_remainder = false;
  std::uint64_t seed = 1;
  std::string manifest;  // read bags from a manifest instead of partitioning
};

struct SweepConfig {
  std::vector<double> lambda;
  std::vector<double> tau;
  std::size_t workers = 1;
};

struct RunConfig {
  DatasetConfig dataset;
  BagConfig bags;
  TrainConfig train;
  SweepConfig sweep;
  std::string out = "runs/llpdc";
};

inline const char* normalization_name(InstanceNormalization mode) {
  switch (mode) {
    case InstanceNormalization::selected_mean: return "selected_mean";
    case InstanceNormalization::batch_mean: return "batch_mean";
    case InstanceNormalization::sum: return "sum";
  }
  return "selected_mean";
}

inline InstanceNormalization parse_normalization(const std::string& name) {
  if (name == "selected_mean") return InstanceNormalization::selected_mean;
  if (name == "batch_mean") return InstanceNormalization::batch_mean;
  if (name == "sum") return InstanceNormalization::sum;
  throw UsageError("unknown instance_normalization " + name);
}

inline json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"classes", c.dataset.classes},
        {"dim", c.dataset.dim},
        {"n_per_class", c.dataset.n_per_class},
        {"separation", c.dataset.separation},
        {"test_count", c.dataset.test_count},
        {"seed", c.dataset.seed},
        {"train_csv", c.dataset.train_csv},
        {"test_csv", c.dataset.test_csv},
        {"label_base", c.dataset.label_base},
        {"has_header", c.dataset.has_header},
        {"delimiter", c.dataset.delimiter}}},
      {"bags",
       {{"bag_size", c.bags.bag_size},
        {"sizes", c.bags.sizes},
        {"drop_remainder", c.bags.drop_remainder},
        {"seed", c.bags.seed},
        {"manifest", c.bags.manifest}}},
      {"train",
       {{"lambda", t.lambda},
        {"tau", t.tau},
        {"bags_per_step", t.bags_per_step},
        {"epochs", t.epochs},
        {"weak_noise", t.weak_noise},
        {"strong_noise", t.strong_noise},
        {"seed", t.seed},
        {"architecture",
         {{"kind", t.architecture.kind == Architecture::Kind::linear ? "linear" : "one_hidden"},
          {"hidden", t.architecture.hidden}}},
        {"learning_rate", t.learning_rate},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"instance_normalization", normalization_name(t.instance_normalization)}}},
      {"sweep", {{"lambda", c.sweep.lambda}, {"tau", c.sweep.tau}, {"workers", c.sweep.workers}}},
      {"out", c.out},
  };
}

namespace detail {

inline void reject_unknown_keys(const json& given, const json& known, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!known.contains(it.key())) throw UsageError("unknown config key " + path);
    if (known[it.key()].is_object()) {
      if (!it.value().is_object()) throw UsageError("config key " + path + " must be an object");
      reject_unknown_keys(it.value(), known[it.key()], path);
    }
  }
}

}  // namespace detail

/// Overlays `given` on the defaults. Unknown keys and wrong types are usage errors.
inline RunConfig run_config_from_json(const json& given) {
  if (!given.is_object()) throw UsageError("config must be a JSON object");
  json merged = to_json(RunConfig{});
  detail::reject_unknown_keys(given, merged, "");
  merged.merge_patch(given);

  RunConfig c;
  try {
    const auto& d = merged.at("dataset");
    c.dataset.source = d.at("source").get<std::string>();
    c.dataset.classes = d.at("classes").get<std::size_t>();
    c.dataset.dim = d.at("dim").get<std::size_t>();
    c.dataset.n_per_class = d.at("n_per_class").get<std::size_t>();
    c.dataset.separation = d.at("separation").get<double>();
    c.dataset.test_count = d.at("test_count").get<std::size_t>();
    c.dataset.seed = d.at("seed").get<std::uint64_t>();
    c.dataset.train_csv = d.at("train_csv").get<std::string>();
    c.dataset.test_csv = d.at("test_csv").get<std::string>();
    c.dataset.label_base = d.at("label_base").get<std::size_t>();
    c.dataset.has_header = d.at("has_header").get<bool>();
    c.dataset.delimiter = d.at("delimiter").get<std::string>();

    const auto& b = merged.at("bags");
    c.bags.bag_size = b.at("bag_size").get<std::size_t>();
    c.bags.sizes = b.at("sizes").get<std::vector<std::size_t>>();
    c.bags.drop_remainder = b.at("drop_remainder").get<bool>();
    c.bags.seed = b.at("seed").get<std::uint64_t>();
    c.bags.manifest = b.at("manifest").get<std::string>();

    const auto& t = merged.at("train");
    c.train.lambda = t.at("lambda").get<double>();
    c.train.tau = t.at("tau").get<double>();
    c.train.bags_per_step = t.at("bags_per_step").get<std::size_t>();
    c.train.epochs = t.at("epochs").get<std::size_t>();
    c.train.weak_noise = t.at("weak_noise").get<double>();
    c.train.strong_noise = t.at("strong_noise").get<double>();
    c.train.seed = t.at("seed").get<std::uint64_t>();
    const std::string kind = t.at("architecture").at("kind").get<std::string>();
    const auto hidden = t.at("architecture").at("hidden").get<std::size_t>();
    if (kind == "linear") {
      c.train.architecture = Architecture::linear();
    } else if (kind == "one_hidden") {
      c.train.architecture = Architecture::one_hidden(hidden);
    } else {
      throw UsageError("unknown architecture " + kind);
    }
    c.train.learning_rate = t.at("learning_rate").get<double>();
    c.train.momentum = t.at("momentum").get<double>();
    c.train.weight_decay = t.at("weight_decay").get<double>();
    c.train.instance_normalization = parse_normalization(t.at("instance_normalization").get<std::string>());

    const auto& s = merged.at("sweep");
    c.sweep.lambda = s.at("lambda").get<std::vector<double>>();
    c.sweep.tau = s.at("tau").get<std::vector<double>>();
    c.sweep.workers = s.at("workers").get<std::size_t>();

    c.out = merged.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  try {
    return run_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + " is not valid JSON: " + e.what());
  }
}

/// Command-line overrides; unset fields leave the config untouched.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> lambda;
  std::optional<double> tau;
  std::optional<std::size_t> bag_size;
  std::optional<std::size_t> workers;
};

inline void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.dataset.seed = c.bags.seed = c.train.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.lambda) c.train.lambda = *o.lambda;
  if (o.tau) c.train.tau = *o.tau;
  if (o.bag_size) c.bags.bag_size = *o.bag_size;
  if (o.workers) c.sweep.workers = *o.workers;
}

inline void validate_run_config(const RunConfig& c) {
  if (auto error = validate_config(c.train)) throw UsageError(*error);
  const auto& d = c.dataset;
  if (d.source == "synthetic") {
    if (d.classes < 2) throw UsageError("dataset.classes must be >= 2");
    if (d.dim == 0 || d.n_per_class == 0) throw UsageError("dataset.dim and dataset.n_per_class must be positive");
    if (d.test_count >= d.classes * d.n_per_class) throw UsageError("dataset.test_count leaves no training data");
  } else if (d.source == "csv") {
    if (d.classes < 2) throw UsageError("dataset.classes must be >= 2");
    if (d.train_csv.empty()) throw UsageError("dataset.train_csv is required for csv source");
    if (!fs::exists(d.train_csv)) throw UsageError("cannot open " + d.train_csv);
    if (!d.test_csv.empty() && !fs::exists(d.test_csv)) throw UsageError("cannot open " + d.test_csv);
    if (d.delimiter.size() != 1) throw UsageError("dataset.delimiter must be one character");
  } else {
    throw UsageError("unknown dataset.source " + d.source);
  }
  if (!c.bags.manifest.empty() && !fs::exists(c.bags.manifest)) throw UsageError("cannot open " + c.bags.manifest);
  if (c.bags.manifest.empty() && c.bags.sizes.empty() && c.bags.bag_size == 0)
    throw UsageError("bags.bag_size must be positive");
  if (c.out.empty()) throw UsageError("out directory must not be empty");
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  Dataset train;
  std::optional<Dataset> test;
  std::vector<Bag> bags;
};

inline PreparedData prepare_data(const RunConfig& c) {
  PreparedData prepared;
  const auto& d = c.dataset;
  try {
    if (d.source == "synthetic") {
      Dataset all = make_gaussian_mixture(d.classes, d.dim, d.n_per_class, d.separation, d.seed);
      if (d.test_count == 0) {
        apply_standardization(all, fit_standardization(all));
        prepared.train = std::move(all);
      } else {
        auto [train_split, test_split] = train_test_split(all, d.test_count, d.seed);
        standardize_split(train_split, test_split);
        prepared.train = std::move(train_split);
        prepared.test = std::move(test_split);
      }
    } else {
      const CsvSchema schema{d.classes, d.label_base, d.has_header, d.delimiter[0]};
      prepared.train = load_csv(d.train_csv, schema);
      if (!d.test_csv.empty()) prepared.test = load_csv(d.test_csv, schema, &*prepared.train.standardization);
    }

    if (!c.bags.manifest.empty()) {
      std::ifstream in(c.bags.manifest);
      prepared.bags = read_bag_manifest(in);
    } else {
      prepared.bags =
          partition_into_bags(prepared.train, BagSpec{c.bags.bag_size, c.bags.sizes, c.bags.seed, c.bags.drop_remainder});
    }
    check_bags(prepared.train, prepared.bags);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  } catch (const TrainError& e) {
    throw UsageError(e.what());
  }
  return prepared;
}

inline void make_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

inline void echo_config(const json& effective, const std::string& command) {
  spdlog::info("{} effective config: {}", command, effective.dump());
}

// ---------------------------------------------------------------------------
// assign

/// Reads {"probs", "alpha"} from `input` ("-" for stdin) and writes the
/// labeling to `output` (empty for `out`).
inline int cmd_assign(const std::string& input, const std::string& output, std::ostream& out, std::ostream& err) {
  echo_config({{"input", input}, {"output", output.empty() ? "-" : output}}, "assign");
  json request_json;
  try {
    if (input == "-") {
      request_json = json::parse(std::cin);
    } else {
      std::ifstream in(input);
      if (!in) {
        err << "error: cannot open " << input << '\n';
        return kUsageError;
      }
      request_json = json::parse(in);
    }
  } catch (const json::parse_error& e) {
    err << "error: input is not valid JSON: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    const AssignmentRequest request = parse_assignment_request(request_json);
    const auto m = static_cast<std::size_t>(request.probs.rows());
    const AssignmentResult result = assign_pseudo_labels(request.probs, counts_from_proportions(request.alpha, m));
    const std::string text = assignment_to_json(result).dump() + "\n";
    if (output.empty()) {
      out << text;
    } else {
      std::ofstream file(output);
      if (!file) {
        err << "error: cannot write " << output << '\n';
        return kUsageError;
      }
      file << text;
    }
    spdlog::debug("assigned {} instances, quantized cost {}", m, result.quantized_cost);
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const AssignmentError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  bool ok = false;
  std::string status;
  double final_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Trains one configuration and writes metrics.csv and checkpoint.json into
/// `dir`. Divergence leaves a diagnostic checkpoint_diverged.json instead.
inline TrainOutcome train_into(const PreparedData& data, const TrainConfig& config, const fs::path& dir) {
  TrainOutcome outcome;
  try {
    const TrainResult result = train(data.train, data.bags, config, data.test ? &*data.test : nullptr);
    std::ostringstream metrics;
    write_metrics_csv(metrics, result.metrics);
    write_text(dir / "metrics.csv", metrics.str());
    write_text(dir / "checkpoint.json", checkpoint_to_json(result.params).dump(2) + "\n");
    for (const auto& m : result.metrics)
      spdlog::debug("epoch {} bag_loss {:.6f} instance_loss {:.6f} pl_acc {:.4f} pl_ratio {:.4f} test_acc {:.4f}",
                    m.epoch, m.bag_loss, m.instance_loss, m.pseudo_label_accuracy, m.pseudo_label_ratio,
                    m.test_accuracy);
    outcome.ok = true;
    outcome.status = "ok";
    outcome.final_accuracy = result.metrics.back().test_accuracy;
  } catch (const TrainingDiverged& e) {
    write_text(dir / "checkpoint_diverged.json", checkpoint_to_json(e.params).dump(2) + "\n");
    outcome.status = std::string("diverged: ") + e.what();
  } catch (const std::exception& e) {
    outcome.status = std::string("error: ") + e.what();
  }
  return outcome;
}

inline int cmd_train(RunConfig config, std::ostream& out, std::ostream& err) {
  try {
    validate_run_config(config);
    make_out_dir(config.out);
    const json effective = to_json(config);
    echo_config(effective, "train");
    write_text(fs::path(config.out) / "config.json", effective.dump(2) + "\n");

    const PreparedData data = prepare_data(config);
    std::ofstream manifest(fs::path(config.out) / "bags.jsonl");
    write_bag_manifest(manifest, data.bags);
    spdlog::info("training on {} instances in {} bags for {} epochs", data.train.size(), data.bags.size(),
                 config.train.epochs);

    const TrainOutcome outcome = train_into(data, config.train, config.out);
    if (!outcome.ok) {
      err << "error: " << outcome.status << '\n';
      return kCheckFailed;
    }
    out << "final test accuracy: " << outcome.final_accuracy << '\n';
    out << "wrote " << (fs::path(config.out) / "metrics.csv").string() << '\n';
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepCell {
  double lambda = 0.0;
  double tau = 0.0;
  TrainOutcome outcome;
};

inline std::string format_number(double value) {
  std::ostringstream text;
  text << std::setprecision(10) << value;
  return text.str();
}

/// Runs every (lambda, tau) cell on `workers` threads. Cells come back in
/// grid order, lambda-major. Failed cells carry their status.
inline std::vector<SweepCell> run_sweep(const PreparedData& data, const TrainConfig& base,
                                        const std::vector<double>& lambdas, const std::vector<double>& taus,
                                        std::size_t workers, const fs::path& dir) {
  std::vector<SweepCell> cells;
  for (double lambda : lambdas)
    for (double tau : taus) cells.push_back({lambda, tau, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepCell& cell = cells[i];
      TrainConfig config = base;
      config.lambda = cell.lambda;
      config.tau = cell.tau;
      if (auto error = validate_config(config)) {
        cell.outcome.status = "error: " + *error;
        continue;
      }
      const fs::path cell_dir = dir / ("lambda_" + format_number(cell.lambda) + "_tau_" + format_number(cell.tau));
      std::error_code ec;
      fs::create_directories(cell_dir, ec);
      cell.outcome = train_into(data, config, cell_dir);
      spdlog::info("cell lambda={} tau={}: {} accuracy {}", cell.lambda, cell.tau, cell.outcome.status,
                   cell.outcome.final_accuracy);
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(cells.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& thread : pool) thread.join();
  return cells;
}

inline void write_sweep_summary(std::ostream& out, const std::vector<SweepCell>& cells) {
  out << "lambda,tau,final_accuracy,status\n";
  for (const auto& cell : cells) {
    std::string status = cell.outcome.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    out << format_number(cell.lambda) << ',' << format_number(cell.tau) << ','
        << (std::isnan(cell.outcome.final_accuracy) ? std::string("nan") : format_number(cell.outcome.final_accuracy))
        << ',' << status << '\n';
  }
}

inline int cmd_sweep(RunConfig config, std::ostream& out, std::ostream& err) {
  try {
    if (config.sweep.lambda.empty() || config.sweep.tau.empty())
      throw UsageError("empty sweep grid: give at least one lambda and one tau");
    if (config.sweep.workers == 0) throw UsageError("workers must be positive");
    validate_run_config(config);
    make_out_dir(config.out);
    const json effective = to_json(config);
    echo_config(effective, "sweep");
    write_text(fs::path(config.out) / "config.json", effective.dump(2) + "\n");

    const PreparedData data = prepare_data(config);
    const auto cells =
        run_sweep(data, config.train, config.sweep.lambda, config.sweep.tau, config.sweep.workers, config.out);
    std::ostringstream summary;
    write_sweep_summary(summary, cells);
    write_text(fs::path(config.out) / "summary.csv", summary.str());
    out << summary.str();
    const bool all_ok = std::all_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.outcome.ok; });
    if (!all_ok) {
      err << "error: some sweep cells failed; see summary.csv\n";
      return kCheckFailed;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// oracle-check

inline constexpr std::size_t kOracleMaxBagSize = 8;
inline constexpr std::size_t kOracleMaxClasses = 4;

struct OracleCase {
  ProbabilityMatrix probs;
  ClassCounts counts;
};

/// Random small instance. About a third of the cases use coarse probabilities
/// and repeated rows so that ties in the objective are common.
inline OracleCase random_oracle_case(std::mt19937_64& rng, std::size_t max_m, std::size_t max_l) {
  std::uniform_int_distribution<std::size_t> pick_m(std::min<std::size_t>(2, max_m), max_m);
  std::uniform_int_distribution<std::size_t> pick_l(2, max_l);
  const std::size_t m = pick_m(rng);
  const std::size_t l = pick_l(rng);
  const bool tied = std::uniform_int_distribution<int>(0, 2)(rng) == 0;

  OracleCase c;
  c.probs.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(l));
  std::gamma_distribution<double> gamma(1.0, 1.0);
  std::uniform_int_distribution<int> coarse(1, 4);
  for (std::size_t j = 0; j < m; ++j) {
    const auto r = static_cast<Eigen::Index>(j);
    if (tied && j > 0 && std::uniform_int_distribution<int>(0, 1)(rng) == 0) {
      c.probs.row(r) = c.probs.row(r - 1);
      continue;
    }
    for (std::size_t k = 0; k < l; ++k)
      c.probs(r, static_cast<Eigen::Index>(k)) = tied ? static_cast<double>(coarse(rng)) : gamma(rng) + 1e-9;
    c.probs.row(r) /= c.probs.row(r).sum();
  }

  c.counts.counts.assign(l, 0);
  std::uniform_int_distribution<std::size_t> pick_class(0, l - 1);
  for (std::size_t j = 0; j < m; ++j) ++c.counts.counts[pick_class(rng)];
  return c;
}

struct OracleReport {
  std::size_t trials = 0;
  std::size_t passed = 0;
  std::optional<json> first_failure;
};

inline json describe_case(const OracleCase& c, const AssignmentResult& flow, const AssignmentResult& oracle) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(c.probs.rows()));
  for (Eigen::Index r = 0; r < c.probs.rows(); ++r)
    for (Eigen::Index k = 0; k < c.probs.cols(); ++k) rows[static_cast<std::size_t>(r)].push_back(c.probs(r, k));
  return {{"probs", rows},
          {"counts", c.counts.counts},
          {"flow_labels", flow.labels},
          {"flow_neg_log_prob", flow.total_neg_log_prob},
          {"oracle_labels", oracle.labels},
          {"oracle_neg_log_prob", oracle.total_neg_log_prob}};
}

/// Flow solver against exhaustive enumeration: identical labels, costs within
/// m * 2e-6.
inline OracleReport run_oracle_check(std::size_t trials, std::size_t max_m, std::size_t max_l, std::uint64_t seed) {
  OracleReport report;
  report.trials = trials;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const OracleCase c = random_oracle_case(rng, max_m, max_l);
    const AssignmentResult flow = assign_pseudo_labels(c.probs, c.counts);
    const AssignmentResult oracle = enumerate_optimal(c.probs, c.counts);
    const double tolerance = static_cast<double>(c.probs.rows()) * 2e-6;
    const bool match = flow.labels == oracle.labels &&
                       std::abs(flow.total_neg_log_prob - oracle.total_neg_log_prob) <= tolerance &&
                       label_histogram(flow.labels, c.counts.classes()) == c.counts;
    if (match) {
      ++report.passed;
    } else if (!report.first_failure) {
      report.first_failure = describe_case(c, flow, oracle);
      report.first_failure->emplace("trial", t);
    }
  }
  return report;
}

inline int cmd_oracle_check(std::size_t trials, std::size_t max_m, std::size_t max_l, std::uint64_t seed,
                            const std::string& out_dir, std::ostream& out, std::ostream& err) {
  echo_config({{"trials", trials}, {"max_m", max_m}, {"max_l", max_l}, {"seed", seed}, {"out", out_dir}},
              "oracle-check");
  if (max_m > kOracleMaxBagSize || max_l > kOracleMaxClasses) {
    err << "error: enumeration guard: oracle-check allows max-m <= " << kOracleMaxBagSize << " and max-l <= "
        << kOracleMaxClasses << '\n';
    return kUsageError;
  }
  if (max_m < 1 || max_l < 2) {
    err << "error: oracle-check needs max-m >= 1 and max-l >= 2\n";
    return kUsageError;
  }
  if (trials == 0) {
    out << "oracle-check: 0 trials, vacuous pass\n";
    return kOk;
  }
  const OracleReport report = run_oracle_check(trials, max_m, max_l, seed);
  out << "oracle-check: " << report.passed << "/" << report.trials << " trials matched\n";
  if (report.first_failure) {
    const std::string text = report.first_failure->dump(2);
    if (!out_dir.empty()) {
      try {
        make_out_dir(out_dir);
        write_text(fs::path(out_dir) / "oracle_failure.json", text + "\n");
      } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
      }
    }
    err << "first mismatch:\n" << text << '\n';
    return kCheckFailed;
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  std::size_t m = 0;
  std::size_t l = 0;
  std::size_t repeats = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
};

/// Random bag of m instances over l classes with softmax posteriors and
/// counts drawn from a random labeling.
inline OracleCase random_bench_case(std::mt19937_64& rng, std::size_t m, std::size_t l) {
  OracleCase c;
  std::normal_distribution<double> normal(0.0, 2.0);
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(l));
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = normal(rng);
  c.probs = softmax_rows(logits);
  c.counts.counts.assign(l, 0);
  std::uniform_int_distribution<std::size_t> pick_class(0, l - 1);
  for (std::size_t j = 0; j < m; ++j) ++c.counts.counts[pick_class(rng)];
  return c;
}

/// Wall time of one assignment per repeat, each repeat on a fresh instance.
/// Fast instances are run in a loop of at least 2 ms and averaged.
inline BenchRow bench_assignment(std::size_t m, std::size_t l, std::size_t repeats, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::mt19937_64 rng(seed ^ (m * 0x9E3779B97F4A7C15ULL) ^ l);
  std::vector<double> samples;
  for (std::size_t r = 0; r < repeats; ++r) {
    const OracleCase c = random_bench_case(rng, m, l);
    std::size_t iterations = 0;
    const auto start = clock::now();
    auto now = start;
    do {
      const AssignmentResult result = assign_pseudo_labels(c.probs, c.counts);
      if (result.labels.size() != m) throw std::logic_error("bench: wrong label count");
      ++iterations;
      now = clock::now();
    } while (now - start < std::chrono::milliseconds(2));
    samples.push_back(std::chrono::duration<double, std::milli>(now - start).count() / static_cast<double>(iterations));
  }
  BenchRow row{m, l, repeats, 0.0, 0.0};
  for (double s : samples) row.mean_ms += s;
  row.mean_ms /= static_cast<double>(samples.size());
  if (samples.size() > 1) {
    double sq = 0.0;
    for (double s : samples) sq += (s - row.mean_ms) * (s - row.mean_ms);
    row.std_ms = std::sqrt(sq / static_cast<double>(samples.size() - 1));
  }
  return row;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope needs two or more points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw std::invalid_argument("loglog_slope needs distinct x values");
  return sxy / sxx;
}

inline constexpr double kMaxScalingSlope = 2.3;

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows, bool with_std) {
  out << "m,l,repeats,mean_ms" << (with_std ? ",std_ms" : "") << '\n';
  out << std::setprecision(6);
  for (const auto& r : rows) {
    out << r.m << ',' << r.l << ',' << r.repeats << ',' << r.mean_ms;
    if (with_std) out << ',' << r.std_ms;
    out << '\n';
  }
}

inline int cmd_bench(const std::vector<std::size_t>& ms, const std::vector<std::size_t>& ls, std::size_t repeats,
                     std::uint64_t seed, const std::string& out_dir, std::ostream& out, std::ostream& err) {
  echo_config({{"m", ms}, {"l", ls}, {"repeats", repeats}, {"seed", seed}, {"out", out_dir}}, "bench");
  if (ms.empty() || ls.empty() || repeats == 0) {
    err << "error: bench needs at least one m, one l and repeats >= 1\n";
    return kUsageError;
  }
  if (std::any_of(ms.begin(), ms.end(), [](std::size_t m) { return m == 0; }) ||
      std::any_of(ls.begin(), ls.end(), [](std::size_t l) { return l < 2; })) {
    err << "error: bench needs m >= 1 and l >= 2\n";
    return kUsageError;
  }

  std::vector<BenchRow> rows;
  for (std::size_t l : ls)
    for (std::size_t m : ms) rows.push_back(bench_assignment(m, l, repeats, seed));

  std::ostringstream csv;
  write_bench_csv(csv, rows, repeats > 1);
  if (!out_dir.empty()) {
    try {
      make_out_dir(out_dir);
      write_text(fs::path(out_dir) / "bench.csv", csv.str());
    } catch (const UsageError& e) {
      err << "error: " << e.what() << '\n';
      return kUsageError;
    }
  }
  out << csv.str();

  bool pass = true;
  for (std::size_t l : ls) {
    std::vector<double> x, y;
    for (const auto& r : rows)
      if (r.l == l && std::find(x.begin(), x.end(), static_cast<double>(r.m)) == x.end()) {
        x.push_back(static_cast<double>(r.m));
        y.push_back(r.mean_ms);
      }
    if (x.size() < 2) {
      out << "slope l=" << l << ": n/a\n";
      continue;
    }
    const double slope = loglog_slope(x, y);
    const bool ok = slope <= kMaxScalingSlope;
    pass = pass && ok;
    out << "slope l=" << l << ": " << std::setprecision(3) << slope << (ok ? " pass" : " FAIL") << '\n';
  }
  return pass ? kOk : kCheckFailed;
}

}  // namespace llpdc::cli
