#pragma once

// Experiment configuration, seeding, replication, metrics and plots.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wcmdp/envs.hpp"
#include "wcmdp/exact.hpp"
#include "wcmdp/neural.hpp"
#include "wcmdp/tabular.hpp"

namespace wcmdp {

/// Invalid or unreadable configuration. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Config

/// section -> key -> raw value. Keys before any section header land in "".
using IniData = std::map<std::string, std::map<std::string, std::string>>;

/// '#' and ';' start comments; whitespace around keys and values is trimmed.
/// Throws ConfigError on malformed lines or duplicate keys.
IniData parse_ini(const std::string& text);

inline const std::vector<std::string> kEnvIds{"ev_charging", "inventory", "ad_matching", "random"};
inline const std::vector<std::string> kTabularAlgos{"ql", "double_ql", "lagrange_ql", "wcql"};
inline const std::vector<std::string> kNeuralAlgos{"dqn", "double_dqn", "wcdqn"};

struct LambdaSpec {
  double lo = 0.0;
  double hi = 10.0;
  double step = 0.25;
  std::vector<double> values;  // when nonempty, overrides lo/hi/step

  LambdaGrid grid(int n_constraints) const;
};

struct ExperimentConfig {
  std::string env_id = "ev_charging";
  std::vector<std::string> algorithms{"ql", "wcql"};
  int episodes = 6000;
  int episode_length = 0;  // 0: the environment default
  int replications = 5;
  std::uint64_t master_seed = 0;
  int jobs = 1;
  int rel_error_every = 1;  // 0 disables relative error
  int smoothing_window = 100;
  bool discounted_returns = false;

  EvChargingParams ev;
  InventoryParams inventory;
  AdMatchingParams ad;
  RandomDims random;

  LambdaSpec lambda;
  TabularConfig tabular;

  NeuralConfig neural;
  LambdaSpec neural_lambda{0.0, 10.0, 1.0, {}};

  std::vector<int> sensitivity_n{2, 3, 4, 5};
  int sensitivity_window = 100;

  std::string report_metrics;  // empty: <out>/metrics.csv

  /// Hash of the source text the config was parsed from.
  std::uint64_t source_hash = 0;
};

/// Episode length per environment: EV 50, ad matching 30, inventory 25,
/// random 50.
int default_episode_length(const std::string& env_id);
int episode_length(const ExperimentConfig& cfg);

/// Parses and validates. Unknown sections or keys, bad values and
/// unregistered env/algorithm ids throw ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// ---------------------------------------------------------------------------
// Seeds

/// mix64(mix64(master + c1 * (index + 1)) ^ fnv1a64(tag)). Frozen: changing
/// it changes every result.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, const std::string& tag);

/// Builds the configured environment for replication `index`.
EnvInstance build_env(const ExperimentConfig& cfg, std::uint64_t index);

// ---------------------------------------------------------------------------
// Metrics

struct MetricRow {
  std::string algo;
  std::string env;
  std::uint64_t seed = 0;
  int episode = 0;
  double ret = 0.0;
  std::optional<double> rel_error;
  double wall_ms = 0.0;

  bool operator==(const MetricRow&) const = default;
};

/// Header algo,env,seed,episode,return,rel_error. wall_ms is not written, so
/// the file depends only on config and seed.
void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows);
/// Header algo,env,seed,episode,wall_ms.
void write_timings_csv(std::ostream& out, std::span<const MetricRow> rows);
/// Throws std::runtime_error on a schema mismatch.
std::vector<MetricRow> read_metrics_csv(std::istream& in);

/// ||v - v_star||_2 / ||v_star||_2. Throws std::invalid_argument on a length
/// mismatch or zero-norm reference.
double relative_error(std::span<const double> v, std::span<const double> v_star);

/// Feasible maximum of an agent's action values at every state.
std::vector<double> agent_values(const WcmdpSpec& spec, const TabularAgent& agent,
                                 std::span<const std::vector<std::size_t>> feasible);

// ---------------------------------------------------------------------------
// Manifest

/// Ordered key=value lines.
struct Manifest {
  std::vector<std::pair<std::string, std::string>> entries;

  void add(std::string key, std::string value) { entries.emplace_back(std::move(key), std::move(value)); }
  void add(std::string key, std::span<const double> values);
  std::optional<std::string> get(const std::string& key) const;
  bool operator==(const Manifest&) const = default;
};

void write_manifest(std::ostream& out, const Manifest& m);
/// Throws std::runtime_error on a line without '='.
Manifest read_manifest(std::istream& in);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Runs

struct RunStats {
  std::string algo;
  std::uint64_t replication = 0;
  std::map<std::string, double> values;
};

struct ExperimentResult {
  std::vector<MetricRow> rows;
  std::vector<RunStats> stats;
  Manifest manifest;
  std::vector<Checkpoint> checkpoints;  // neural runs only
};

/// Runs every (replication, algorithm) pair on up to cfg.jobs threads. Rows
/// come back ordered by (replication, algorithm order, episode) whatever the
/// completion order. Algorithms must all be tabular or all neural.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Exact V* for the environment when under the solver cap, else empty.
std::vector<double> exact_values_if_small(const WcmdpSpec& spec);

// ---------------------------------------------------------------------------
// Aggregation and plots

struct AggregatePoint {
  std::string env;
  std::string series;
  int episode = 0;
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

enum class Metric { kReturn, kRelError };

/// Per-replication trailing mean over `window` episodes (shorter at the
/// start), then the mean and mean +- 1.96 sd / sqrt(k) across the k
/// replications of each (env, algo, episode). sd is the sample deviation;
/// k = 1 gives a zero-width interval. Rows without the metric are skipped.
std::vector<AggregatePoint> aggregate(std::span<const MetricRow> rows, int window, Metric metric);

/// Header series,episode,mean,ci_lo,ci_hi.
void write_plot_csv(std::ostream& out, std::span<const AggregatePoint> points);
/// One polyline per series.
void write_plot_svg(std::ostream& out, std::span<const AggregatePoint> points, const std::string& title);

/// For every (env, metric) with data: plot_<env>_<metric>.csv and .svg in
/// `dir`. Returns the files written. Throws std::runtime_error if a file
/// cannot be written.
std::vector<std::string> emit_plots(std::span<const MetricRow> rows, int window, const std::string& dir);

// ---------------------------------------------------------------------------
// Sensitivity

struct SensitivityRow {
  int n = 0;
  double ql = 0.0;
  double wcql = 0.0;
  double percent = 0.0;
};

/// (b - a) / |a| * 100.
double percent_improvement(double baseline, double candidate);

/// Mean over replications of the mean return over each run's final `window`
/// episodes, for one algorithm.
double final_window_mean(std::span<const MetricRow> rows, const std::string& algo, int window);

/// EV charging with n_spots = each N, the configured baseline and candidate
/// tabular algorithms (default ql, wcql) on shared seeds.
std::vector<SensitivityRow> sensitivity_study(const ExperimentConfig& base, std::span<const int> n_values,
                                              const std::string& baseline = "ql",
                                              const std::string& candidate = "wcql");

}  // namespace wcmdp
