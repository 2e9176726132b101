#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <memory>
#include <numeric>
#include <thread>

#include "wcmdp/harness.hpp"

namespace wcmdp {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

bool is_tabular(const std::string& algo) {
  return std::find(kTabularAlgos.begin(), kTabularAlgos.end(), algo) != kTabularAlgos.end();
}

/// Everything shared by the runs of one replication.
struct Replication {
  EnvInstance env;
  std::uint64_t seed = 0;
  std::vector<double> v_star;
  std::vector<std::vector<std::size_t>> feasible;  // per state, only with v_star
};

struct RunOutput {
  std::vector<MetricRow> rows;
  RunStats stats;
  std::optional<Checkpoint> checkpoint;
};

std::unique_ptr<TabularAgent> make_tabular_agent(const std::string& algo, const WcmdpSpec& spec,
                                                 const ExperimentConfig& cfg, const LambdaGrid& grid, Rng& init_rng,
                                                 Rng& bank_rng, std::uint64_t coin_seed) {
  if (algo == "ql") return std::make_unique<QLearningAgent>(spec, cfg.tabular, init_rng);
  if (algo == "double_ql") return std::make_unique<DoubleQLearningAgent>(spec, cfg.tabular, init_rng, coin_seed);
  if (algo == "lagrange_ql") return std::make_unique<LagrangeQLearningAgent>(spec, grid, cfg.tabular, bank_rng);
  if (algo == "wcql") return std::make_unique<WcqlAgent>(spec, grid, cfg.tabular, init_rng, bank_rng);
  throw ConfigError("unknown tabular algorithm '" + algo + "'");
}

RunOutput run_tabular(const ExperimentConfig& cfg, const Replication& rep, std::uint64_t index,
                      const std::string& algo) {
  const WcmdpSpec& spec = rep.env.spec;
  const std::uint64_t m = cfg.master_seed;
  Rng init_rng(derive_seed(m, index, "init"));
  Rng bank_rng(derive_seed(m, index, "bank_init"));
  Rng explore_rng(derive_seed(m, index, "explore"));
  Rng env_rng(derive_seed(m, index, "env"));
  const LambdaGrid grid = cfg.lambda.grid(spec.num_constraints());
  auto agent = make_tabular_agent(algo, spec, cfg, grid, init_rng, bank_rng, derive_seed(m, index, "coin"));

  const int horizon = episode_length(cfg);
  const bool track_error = !rep.v_star.empty() && cfg.rel_error_every > 0 && agent->has_q();
  RunOutput out;
  out.rows.reserve(cfg.episodes);
  for (int e = 0; e < cfg.episodes; ++e) {
    const auto start = Clock::now();
    FullState s = spec.sample_initial_state(env_rng);
    double total = 0.0;
    double weight = 1.0;
    for (int t = 0; t < horizon; ++t) {
      const FactoredAction a = agent->act(s, explore_rng);
      Transition tr = sample_step(spec, s, a, env_rng);
      agent->observe(tr);
      total += weight * tr.total_reward();
      if (cfg.discounted_returns) weight *= spec.discount();
      s = std::move(tr.next_state);
    }
    MetricRow row{algo, cfg.env_id, rep.seed, e, total, std::nullopt, 0.0};
    if (track_error && ((e + 1) % cfg.rel_error_every == 0 || e + 1 == cfg.episodes)) {
      row.rel_error = relative_error(agent_values(spec, *agent, rep.feasible), rep.v_star);
    }
    row.wall_ms = elapsed_ms(start);
    out.rows.push_back(std::move(row));
  }

  out.stats.algo = algo;
  out.stats.replication = index;
  if (const auto* w = dynamic_cast<const WcqlAgent*>(agent.get())) {
    out.stats.values["projections"] = static_cast<double>(w->projections());
    out.stats.values["violations"] = static_cast<double>(w->violations());
  }
  if (!out.rows.empty() && out.rows.back().rel_error) out.stats.values["final_rel_error"] = *out.rows.back().rel_error;
  return out;
}

NeuralAlgo neural_algo(const std::string& algo) {
  if (algo == "dqn") return NeuralAlgo::kDqn;
  if (algo == "double_dqn") return NeuralAlgo::kDoubleDqn;
  if (algo == "wcdqn") return NeuralAlgo::kWcdqn;
  throw ConfigError("unknown neural algorithm '" + algo + "'");
}

RunOutput run_neural(const ExperimentConfig& cfg, const Replication& rep, std::uint64_t index,
                     const std::string& algo) {
  const WcmdpSpec& spec = rep.env.spec;
  const std::uint64_t m = cfg.master_seed;
  NeuralSeeds seeds{derive_seed(m, index, "init"),    derive_seed(m, index, "bank_init"),
                    derive_seed(m, index, "explore"), derive_seed(m, index, "env"),
                    derive_seed(m, index, "lambda"),  derive_seed(m, index, "replay")};
  NeuralConfig ncfg = cfg.neural;
  ncfg.episodes = cfg.episodes;
  ncfg.episode_length = episode_length(cfg);
  ncfg.discounted_returns = cfg.discounted_returns;

  const auto start = Clock::now();
  NeuralResult res = train_neural(spec, neural_algo(algo), ncfg, cfg.neural_lambda.grid(spec.num_constraints()), seeds);
  const double per_episode = elapsed_ms(start) / std::max(1, cfg.episodes);

  RunOutput out;
  for (int e = 0; e < static_cast<int>(res.returns.size()); ++e) {
    out.rows.push_back(MetricRow{algo, cfg.env_id, rep.seed, e, res.returns[e], std::nullopt, per_episode});
  }
  out.stats.algo = algo;
  out.stats.replication = index;
  out.stats.values["updates"] = static_cast<double>(res.updates);
  out.stats.values["target_syncs"] = static_cast<double>(res.target_syncs);

  Checkpoint ck;
  ck.env_id = cfg.env_id;
  ck.dims = res.main.dims();
  ck.seed = rep.seed;
  ck.arrays["main"] = res.main.params();
  if (!res.subagent.params().empty()) {
    ck.arrays["subagent"] = res.subagent.params();
    ck.arrays["b_table"] = res.b_table.values;
  }
  out.checkpoint = std::move(ck);
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::vector<double> exact_values_if_small(const WcmdpSpec& spec) {
  if (!within_exact_cap(spec)) return {};
  return value_iteration(spec).v;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  if (cfg.algorithms.empty()) throw ConfigError("no algorithms configured");
  const bool tabular = is_tabular(cfg.algorithms.front());
  for (const auto& a : cfg.algorithms) {
    if (is_tabular(a) != tabular) throw ConfigError("tabular and neural algorithms cannot be mixed in one experiment");
    if (!tabular) neural_algo(a);
  }

  const auto n_rep = static_cast<std::size_t>(cfg.replications);
  std::vector<Replication> reps;
  reps.reserve(n_rep);
  for (std::size_t r = 0; r < n_rep; ++r) {
    reps.push_back(Replication{build_env(cfg, r), derive_seed(cfg.master_seed, r, "replication"), {}, {}});
    Replication& rep = reps.back();
    if (tabular && cfg.rel_error_every > 0) {
      rep.v_star = exact_values_if_small(rep.env.spec);
      if (!rep.v_star.empty()) {
        rep.feasible.resize(rep.env.spec.num_states());
        for (std::size_t s = 0; s < rep.feasible.size(); ++s) {
          rep.feasible[s] = feasible_action_indices(rep.env.spec, rep.env.spec.index_state(s));
        }
      }
    }
  }

  const std::size_t n_algo = cfg.algorithms.size();
  const std::size_t n_tasks = n_rep * n_algo;
  std::vector<RunOutput> outputs(n_tasks);
  std::vector<std::exception_ptr> errors(n_tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < n_tasks; k = next++) {
      const std::size_t r = k / n_algo;
      const std::string& algo = cfg.algorithms[k % n_algo];
      try {
        outputs[k] = tabular ? run_tabular(cfg, reps[r], r, algo) : run_neural(cfg, reps[r], r, algo);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(std::max(1, cfg.jobs), n_tasks);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentResult result;
  Manifest& mf = result.manifest;
  mf.add("config_hash", hex64(cfg.source_hash));
  mf.add("master_seed", std::to_string(cfg.master_seed));
  mf.add("env", cfg.env_id);
  std::string algos;
  for (const auto& a : cfg.algorithms) algos += (algos.empty() ? "" : ",") + a;
  mf.add("algorithms", algos);
  mf.add("episodes", std::to_string(cfg.episodes));
  mf.add("episode_length", std::to_string(episode_length(cfg)));
  mf.add("replications", std::to_string(cfg.replications));
  for (std::size_t r = 0; r < n_rep; ++r) {
    const std::string prefix = "replication." + std::to_string(r) + ".";
    mf.add(prefix + "seed", std::to_string(reps[r].seed));
    mf.add(prefix + "exact_values", reps[r].v_star.empty() ? "no" : "yes");
    for (const auto& [name, values] : reps[r].env.sampled) mf.add(prefix + name, values);
  }
  for (auto& out : outputs) {
    for (const auto& [name, value] : out.stats.values) {
      mf.add("run." + std::to_string(out.stats.replication) + "." + out.stats.algo + "." + name, format_double(value));
    }
    result.rows.insert(result.rows.end(), std::make_move_iterator(out.rows.begin()),
                       std::make_move_iterator(out.rows.end()));
    result.stats.push_back(std::move(out.stats));
    if (out.checkpoint) result.checkpoints.push_back(std::move(*out.checkpoint));
  }
  return result;
}

double percent_improvement(double baseline, double candidate) {
  if (baseline == 0.0) throw std::invalid_argument("percent_improvement: zero baseline");
  return (candidate - baseline) / std::abs(baseline) * 100.0;
}

double final_window_mean(std::span<const MetricRow> rows, const std::string& algo, int window) {
  std::map<std::uint64_t, std::vector<double>> by_seed;
  for (const MetricRow& r : rows) {
    if (r.algo == algo) by_seed[r.seed].push_back(r.ret);
  }
  if (by_seed.empty()) throw std::invalid_argument("final_window_mean: no rows for " + algo);
  double sum = 0.0;
  for (const auto& [seed, returns] : by_seed) {
    const std::size_t w = std::min<std::size_t>(std::max(window, 1), returns.size());
    sum += std::accumulate(returns.end() - static_cast<std::ptrdiff_t>(w), returns.end(), 0.0) / static_cast<double>(w);
  }
  return sum / static_cast<double>(by_seed.size());
}

std::vector<SensitivityRow> sensitivity_study(const ExperimentConfig& base, std::span<const int> n_values,
                                              const std::string& baseline, const std::string& candidate) {
  std::vector<SensitivityRow> out;
  for (int n : n_values) {
    ExperimentConfig cfg = base;
    cfg.env_id = "ev_charging";
    cfg.ev.n_spots = n;
    cfg.algorithms = {baseline, candidate};
    cfg.rel_error_every = 0;
    const ExperimentResult res = run_experiment(cfg);
    SensitivityRow row;
    row.n = n;
    row.ql = final_window_mean(res.rows, baseline, cfg.sensitivity_window);
    row.wcql = final_window_mean(res.rows, candidate, cfg.sensitivity_window);
    row.percent = percent_improvement(row.ql, row.wcql);
    out.push_back(row);
  }
  return out;
}

}  // namespace wcmdp
