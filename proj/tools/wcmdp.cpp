// wcmdp: command-line front end for exact solves, training runs, bounds,
// the sensitivity study and report generation.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "wcmdp/harness.hpp"

namespace fs = std::filesystem;
using namespace wcmdp;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

ExperimentConfig prepare(const Options& opt) {
  ExperimentConfig cfg = load_config(opt.config);
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (opt.jobs) cfg.jobs = *opt.jobs;
  try {
    build_env(cfg, 0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("environment parameters: ") + e.what());
  }
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + opt.out + ": " + ec.message());
  return cfg;
}

void require_family(const ExperimentConfig& cfg, const std::vector<std::string>& family, const char* command) {
  for (const auto& a : cfg.algorithms) {
    if (std::find(family.begin(), family.end(), a) == family.end()) {
      throw ConfigError(std::string(command) + " does not run algorithm '" + a + "'");
    }
  }
}

void write_experiment(const ExperimentResult& res, const ExperimentConfig& cfg, const fs::path& out) {
  auto metrics = open_out(out / "metrics.csv");
  write_metrics_csv(metrics, res.rows);
  auto timings = open_out(out / "timings.csv");
  write_timings_csv(timings, res.rows);
  auto manifest = open_out(out / "manifest.txt");
  write_manifest(manifest, res.manifest);
  emit_plots(res.rows, cfg.smoothing_window, out.string());
}

const WcmdpSpec& exact_spec(const EnvInstance& env) {
  if (!within_exact_cap(env.spec)) throw std::runtime_error("instance too large for the exact solver");
  return env.spec;
}

int solve_exact(const Options& opt) {
  const ExperimentConfig cfg = prepare(opt);
  const EnvInstance env = build_env(cfg, 0);
  const WcmdpSpec& spec = exact_spec(env);
  const ValueIterationResult vi = value_iteration(spec);
  const fs::path out(opt.out);

  auto v = open_out(out / "v_star.csv");
  v << "state,value\n";
  for (std::size_t s = 0; s < vi.v.size(); ++s) v << s << ',' << format_double(vi.v[s]) << '\n';

  auto q = open_out(out / "q_star.csv");
  q << "state,action,feasible,value\n";
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    const FullState st = spec.index_state(s);
    for (std::size_t a = 0; a < spec.num_actions(); ++a) {
      q << s << ',' << a << ',' << (spec.is_feasible(st, spec.index_action(a)) ? 1 : 0) << ','
        << format_double(vi.q.at(s, a)) << '\n';
    }
  }
  Manifest m;
  m.add("env", cfg.env_id);
  m.add("master_seed", std::to_string(cfg.master_seed));
  m.add("states", std::to_string(spec.num_states()));
  m.add("actions", std::to_string(spec.num_actions()));
  m.add("sweeps", std::to_string(vi.residuals.size()));
  for (const auto& [name, values] : env.sampled) m.add("sampled." + name, values);
  auto mf = open_out(out / "manifest.txt");
  write_manifest(mf, m);
  std::cout << "V* for " << spec.num_states() << " states written to " << (out / "v_star.csv").string() << '\n';
  return 0;
}

int bounds(const Options& opt) {
  const ExperimentConfig cfg = prepare(opt);
  const EnvInstance env = build_env(cfg, 0);
  const WcmdpSpec& spec = exact_spec(env);
  const LambdaGrid grid = cfg.lambda.grid(spec.num_constraints());
  const ValueIterationResult vi = value_iteration(spec);
  const DualBound dual = lagrangian_dual_bound(spec, grid);

  auto csv = open_out(fs::path(opt.out) / "bounds.csv");
  csv << "state,action,q_star,bound,lambda_index\n";
  double min_slack = std::numeric_limits<double>::infinity();
  double max_gap = 0.0;
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    for (std::size_t a : feasible_action_indices(spec, spec.index_state(s))) {
      const double qs = vi.q.at(s, a);
      const double b = dual.bound.at(s, a);
      min_slack = std::min(min_slack, b - qs);
      max_gap = std::max(max_gap, b - qs);
      csv << s << ',' << a << ',' << format_double(qs) << ',' << format_double(b) << ','
          << dual.argmin[s * spec.num_actions() + a] << '\n';
    }
  }
  Manifest m;
  m.add("env", cfg.env_id);
  m.add("grid_size", std::to_string(grid.size()));
  m.add("min_slack", format_double(min_slack));
  m.add("max_gap", format_double(max_gap));
  auto mf = open_out(fs::path(opt.out) / "bounds_summary.txt");
  write_manifest(mf, m);
  std::cout << "bound - Q* over feasible pairs: min " << min_slack << ", max " << max_gap << '\n';
  return 0;
}

int train_tabular(const Options& opt) {
  const ExperimentConfig cfg = prepare(opt);
  require_family(cfg, kTabularAlgos, "train-tabular");
  const ExperimentResult res = run_experiment(cfg);
  write_experiment(res, cfg, opt.out);
  std::cout << res.rows.size() << " metric rows written to " << opt.out << '\n';
  return 0;
}

int train_neural(const Options& opt) {
  const ExperimentConfig cfg = prepare(opt);
  require_family(cfg, kNeuralAlgos, "train-neural");
  const ExperimentResult res = run_experiment(cfg);
  write_experiment(res, cfg, opt.out);
  const fs::path dir = fs::path(opt.out) / "checkpoints";
  fs::create_directories(dir);
  for (std::size_t k = 0; k < res.checkpoints.size(); ++k) {
    const RunStats& st = res.stats[k];
    auto out = open_out(dir / (st.algo + "_rep" + std::to_string(st.replication) + ".bin"));
    write_checkpoint(out, res.checkpoints[k]);
  }
  std::cout << res.rows.size() << " metric rows written to " << opt.out << '\n';
  return 0;
}

int sensitivity(const Options& opt) {
  const ExperimentConfig cfg = prepare(opt);
  const auto rows = sensitivity_study(cfg, cfg.sensitivity_n);
  auto csv = open_out(fs::path(opt.out) / "sensitivity.csv");
  csv << "n,ql,wcql,percent_improvement\n";
  for (const auto& r : rows) {
    csv << r.n << ',' << format_double(r.ql) << ',' << format_double(r.wcql) << ',' << format_double(r.percent)
        << '\n';
    std::cout << "N=" << r.n << "  QL " << r.ql << "  WCQL " << r.wcql << "  " << r.percent << "%\n";
  }
  return 0;
}

int report(const Options& opt) {
  const ExperimentConfig cfg = prepare(opt);
  const fs::path metrics = cfg.report_metrics.empty() ? fs::path(opt.out) / "metrics.csv" : fs::path(cfg.report_metrics);
  std::ifstream in(metrics, std::ios::binary);
  if (!in) throw ConfigError("cannot read metrics file " + metrics.string());
  const auto rows = read_metrics_csv(in);
  const auto files = emit_plots(rows, cfg.smoothing_window, opt.out);

  std::map<std::pair<std::string, std::string>, bool> seen;
  auto summary = open_out(fs::path(opt.out) / "summary.csv");
  summary << "env,algo,final_window_mean\n";
  for (const auto& r : rows) {
    if (!seen.emplace(std::make_pair(r.env, r.algo), true).second) continue;
    std::vector<MetricRow> subset;
    for (const auto& x : rows) {
      if (x.env == r.env) subset.push_back(x);
    }
    summary << r.env << ',' << r.algo << ',' << format_double(final_window_mean(subset, r.algo, cfg.smoothing_window))
            << '\n';
  }
  std::cout << files.size() << " plot files written to " << opt.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly coupled MDP solvers and learners"};
  app.require_subcommand(1);

  Options opt;
  std::uint64_t seed = 0;
  int jobs = 1;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Command commands[] = {
      {"solve-exact", "Value iteration: V* and Q* to CSV", solve_exact},
      {"train-tabular", "Train tabular agents and write metrics", train_tabular},
      {"train-neural", "Train DQN-family agents and write metrics", train_neural},
      {"bounds", "Exact Lagrangian bound against Q*", bounds},
      {"sensitivity", "QL vs WCQL improvement across EV sizes", sensitivity},
      {"report", "Aggregate a metrics file into plots", report},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opt.config, "INI config file")->required();
    sub->add_option("--out", opt.out, "Output directory")->required();
    sub->add_option("--seed", seed, "Master seed (overrides the config)");
    sub->add_option("--jobs", jobs, "Concurrent replications (overrides the config)")->check(CLI::Range(1, 1024));
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (const auto& [sub, cmd] : subs) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--jobs")) opt.jobs = jobs;
    try {
      return cmd->run(opt);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
  }
  return 1;
}
