#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "wcmdp/harness.hpp"

namespace wcmdp {

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::string where(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

double to_double(const std::string& text, const std::string& ctx) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(ctx + ": expected a number, got '" + text + "'");
  return v;
}

long long to_integer(const std::string& text, const std::string& ctx) {
  long long v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError(ctx + ": expected an integer, got '" + text + "'");
  return v;
}

int to_int(const std::string& text, const std::string& ctx, long long lo, long long hi) {
  const long long v = to_integer(text, ctx);
  if (v < lo || v > hi) throw ConfigError(ctx + ": value out of range");
  return static_cast<int>(v);
}

bool to_bool(const std::string& text, const std::string& ctx) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(ctx + ": expected true or false");
}

std::vector<std::string> to_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_doubles(const std::string& text, const std::string& ctx) {
  std::vector<double> out;
  for (const auto& item : to_list(text)) out.push_back(to_double(item, ctx));
  return out;
}

std::vector<int> to_ints(const std::string& text, const std::string& ctx) {
  std::vector<int> out;
  for (const auto& item : to_list(text)) out.push_back(to_int(item, ctx, 1, 1 << 20));
  return out;
}

double positive(double v, const std::string& ctx) {
  if (!(v > 0.0)) throw ConfigError(ctx + ": must be positive");
  return v;
}

double discount_value(const std::string& text, const std::string& ctx) {
  const double g = to_double(text, ctx);
  if (!(g >= 0.0 && g < 1.0)) throw ConfigError(ctx + ": discount must lie in [0, 1)");
  return g;
}

ProjectionMode to_projection(const std::string& text, const std::string& ctx) {
  if (text == "visited") return ProjectionMode::kVisitedPair;
  if (text == "full") return ProjectionMode::kFullSweep;
  if (text == "off") return ProjectionMode::kDisabled;
  throw ConfigError(ctx + ": projection must be visited, full or off");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
using SectionTable = std::map<std::string, Setter>;

void set_lambda(LambdaSpec& spec, const std::string& key, const std::string& v, const std::string& ctx) {
  if (key == "lo") spec.lo = to_double(v, ctx);
  else if (key == "hi") spec.hi = to_double(v, ctx);
  else if (key == "step") spec.step = positive(to_double(v, ctx), ctx);
  else spec.values = to_doubles(v, ctx);
}

std::map<std::string, SectionTable> build_tables() {
  std::map<std::string, SectionTable> t;

  auto& ex = t["experiment"];
  ex["env"] = [](auto& c, auto& v, auto& ctx) {
    if (std::find(kEnvIds.begin(), kEnvIds.end(), v) == kEnvIds.end()) throw ConfigError(ctx + ": unknown env '" + v + "'");
    c.env_id = v;
  };
  ex["algorithms"] = [](auto& c, auto& v, auto& ctx) {
    c.algorithms = to_list(v);
    if (c.algorithms.empty()) throw ConfigError(ctx + ": at least one algorithm required");
  };
  ex["episodes"] = [](auto& c, auto& v, auto& ctx) { c.episodes = to_int(v, ctx, 1, 100000000); };
  ex["episode_length"] = [](auto& c, auto& v, auto& ctx) { c.episode_length = to_int(v, ctx, 1, 100000000); };
  ex["replications"] = [](auto& c, auto& v, auto& ctx) { c.replications = to_int(v, ctx, 1, 100000); };
  ex["seed"] = [](auto& c, auto& v, auto& ctx) {
    const long long s = to_integer(v, ctx);
    if (s < 0) throw ConfigError(ctx + ": seed must be nonnegative");
    c.master_seed = static_cast<std::uint64_t>(s);
  };
  ex["jobs"] = [](auto& c, auto& v, auto& ctx) { c.jobs = to_int(v, ctx, 1, 1024); };
  ex["rel_error_every"] = [](auto& c, auto& v, auto& ctx) { c.rel_error_every = to_int(v, ctx, 0, 100000000); };
  ex["smoothing_window"] = [](auto& c, auto& v, auto& ctx) { c.smoothing_window = to_int(v, ctx, 1, 100000000); };
  ex["discounted_returns"] = [](auto& c, auto& v, auto& ctx) { c.discounted_returns = to_bool(v, ctx); };

  auto& lam = t["lambda"];
  for (const char* k : {"lo", "hi", "step", "values"}) {
    lam[k] = [k](auto& c, auto& v, auto& ctx) { set_lambda(c.lambda, k, v, ctx); };
  }

  auto& tab = t["tabular"];
  tab["alpha_exponent"] = [](auto& c, auto& v, auto& ctx) { c.tabular.alpha.exponent = positive(to_double(v, ctx), ctx); };
  tab["beta_exponent"] = [](auto& c, auto& v, auto& ctx) { c.tabular.beta.exponent = positive(to_double(v, ctx), ctx); };
  tab["eta_exponent"] = [](auto& c, auto& v, auto& ctx) { c.tabular.eta.exponent = positive(to_double(v, ctx), ctx); };
  tab["epsilon_exponent"] = [](auto& c, auto& v, auto& ctx) { c.tabular.epsilon_exponent = to_double(v, ctx); };
  tab["projection"] = [](auto& c, auto& v, auto& ctx) { c.tabular.projection = to_projection(v, ctx); };
  tab["random_init"] = [](auto& c, auto& v, auto& ctx) { c.tabular.random_init = to_bool(v, ctx); };
  tab["init_low"] = [](auto& c, auto& v, auto& ctx) { c.tabular.init_low = to_double(v, ctx); };
  tab["init_high"] = [](auto& c, auto& v, auto& ctx) { c.tabular.init_high = to_double(v, ctx); };

  auto& nn = t["neural"];
  nn["hidden"] = [](auto& c, auto& v, auto& ctx) { c.neural.hidden = to_ints(v, ctx); };
  nn["lr"] = [](auto& c, auto& v, auto& ctx) { c.neural.adam.lr = positive(to_double(v, ctx), ctx); };
  nn["beta1"] = [](auto& c, auto& v, auto& ctx) { c.neural.adam.beta1 = to_double(v, ctx); };
  nn["beta2"] = [](auto& c, auto& v, auto& ctx) { c.neural.adam.beta2 = to_double(v, ctx); };
  nn["adam_eps"] = [](auto& c, auto& v, auto& ctx) { c.neural.adam.eps = positive(to_double(v, ctx), ctx); };
  nn["replay_capacity"] = [](auto& c, auto& v, auto& ctx) { c.neural.replay_capacity = to_int(v, ctx, 1, 100000000); };
  nn["warmup"] = [](auto& c, auto& v, auto& ctx) { c.neural.warmup = to_int(v, ctx, 0, 100000000); };
  nn["batch_size"] = [](auto& c, auto& v, auto& ctx) { c.neural.batch_size = to_int(v, ctx, 1, 1 << 20); };
  nn["target_sync"] = [](auto& c, auto& v, auto& ctx) { c.neural.target_sync = to_int(v, ctx, 1, 100000000); };
  nn["epsilon_start"] = [](auto& c, auto& v, auto& ctx) { c.neural.epsilon_start = to_double(v, ctx); };
  nn["epsilon_end"] = [](auto& c, auto& v, auto& ctx) { c.neural.epsilon_end = to_double(v, ctx); };
  nn["epsilon_decay_steps"] = [](auto& c, auto& v, auto& ctx) { c.neural.epsilon_decay_steps = to_int(v, ctx, 0, 1000000000); };
  nn["kappa"] = [](auto& c, auto& v, auto& ctx) {
    c.neural.kappa = to_double(v, ctx);
    if (c.neural.kappa < 0.0) throw ConfigError(ctx + ": kappa must be nonnegative");
  };
  nn["subagent_steps"] = [](auto& c, auto& v, auto& ctx) { c.neural.subagent_steps = to_bool(v, ctx); };
  nn["eta_exponent"] = [](auto& c, auto& v, auto& ctx) { c.neural.eta.exponent = positive(to_double(v, ctx), ctx); };
  nn["max_joint_actions"] = [](auto& c, auto& v, auto& ctx) { c.neural.max_joint_actions = to_int(v, ctx, 1, 1 << 24); };
  for (const char* k : {"lo", "hi", "step", "values"}) {
    nn[std::string("lambda_") + k] = [k](auto& c, auto& v, auto& ctx) { set_lambda(c.neural_lambda, k, v, ctx); };
  }

  auto& ev = t["ev_charging"];
  ev["n_spots"] = [](auto& c, auto& v, auto& ctx) { c.ev.n_spots = to_int(v, ctx, 1, 16); };
  ev["penalty_coef"] = [](auto& c, auto& v, auto& ctx) { c.ev.penalty_coef = to_double(v, ctx); };
  ev["max_charge"] = [](auto& c, auto& v, auto& ctx) { c.ev.max_charge = to_int(v, ctx, 1, 2); };
  ev["max_deadline"] = [](auto& c, auto& v, auto& ctx) { c.ev.max_deadline = to_int(v, ctx, 1, 4); };
  ev["empty_arrival_prob"] = [](auto& c, auto& v, auto& ctx) { c.ev.empty_arrival_prob = to_double(v, ctx); };
  ev["discount"] = [](auto& c, auto& v, auto& ctx) { c.ev.discount = discount_value(v, ctx); };
  ev["uniform_initial_state"] = [](auto& c, auto& v, auto& ctx) { c.ev.uniform_initial_state = to_bool(v, ctx); };

  auto& inv = t["inventory"];
  inv["n_products"] = [](auto& c, auto& v, auto& ctx) { c.inventory.n_products = to_int(v, ctx, 1, 10); };
  inv["resource_cap"] = [](auto& c, auto& v, auto& ctx) { c.inventory.resource_cap = to_int(v, ctx, 0, 64); };
  inv["noise_points"] = [](auto& c, auto& v, auto& ctx) { c.inventory.noise_points = to_int(v, ctx, 1, 1000); };
  inv["demand_tail"] = [](auto& c, auto& v, auto& ctx) { c.inventory.demand_tail = positive(to_double(v, ctx), ctx); };
  inv["discount"] = [](auto& c, auto& v, auto& ctx) { c.inventory.discount = discount_value(v, ctx); };

  auto& ad = t["ad_matching"];
  ad["reward_lo"] = [](auto& c, auto& v, auto& ctx) { c.ad.reward_lo = to_double(v, ctx); };
  ad["reward_hi"] = [](auto& c, auto& v, auto& ctx) { c.ad.reward_hi = to_double(v, ctx); };
  ad["initial_stock"] = [](auto& c, auto& v, auto& ctx) {
    c.ad.initial_stock = to_ints(v, ctx);
    c.ad.n_advertisers = static_cast<int>(c.ad.initial_stock.size());
  };
  ad["discount"] = [](auto& c, auto& v, auto& ctx) { c.ad.discount = discount_value(v, ctx); };

  auto& rnd = t["random"];
  rnd["n_subproblems"] = [](auto& c, auto& v, auto& ctx) { c.random.n_subproblems = to_int(v, ctx, 1, 64); };
  rnd["endo_size"] = [](auto& c, auto& v, auto& ctx) { c.random.endo_size = to_int(v, ctx, 1, 100000); };
  rnd["action_size"] = [](auto& c, auto& v, auto& ctx) { c.random.action_size = to_int(v, ctx, 1, 100000); };
  rnd["exo_size"] = [](auto& c, auto& v, auto& ctx) { c.random.exo_size = to_int(v, ctx, 1, 100000); };
  rnd["n_constraints"] = [](auto& c, auto& v, auto& ctx) { c.random.n_constraints = to_int(v, ctx, 1, 64); };
  rnd["discount"] = [](auto& c, auto& v, auto& ctx) { c.random.discount = discount_value(v, ctx); };

  auto& sens = t["sensitivity"];
  sens["n_values"] = [](auto& c, auto& v, auto& ctx) { c.sensitivity_n = to_ints(v, ctx); };
  sens["window"] = [](auto& c, auto& v, auto& ctx) { c.sensitivity_window = to_int(v, ctx, 1, 100000000); };

  t["report"]["metrics"] = [](auto& c, auto& v, auto&) { c.report_metrics = v; };
  return t;
}

}  // namespace

IniData parse_ini(const std::string& text) {
  IniData data;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto comment = raw.find_first_of("#;");
    const std::string line = trim(std::string_view(raw).substr(0, comment));
    if (line.empty()) continue;
    const std::string at = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(at + ": empty section name");
      data[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(at + ": empty key");
    if (!data[section].emplace(key, value).second) throw ConfigError(at + ": duplicate key " + where(section, key));
  }
  return data;
}

LambdaGrid LambdaSpec::grid(int n_constraints) const {
  try {
    if (values.empty()) return LambdaGrid::scalar_range(lo, hi, step, n_constraints);
    std::vector<std::vector<double>> m;
    for (double v : values) m.push_back(std::vector<double>(n_constraints, v));
    return LambdaGrid(std::move(m));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("lambda grid: ") + e.what());
  }
}

int default_episode_length(const std::string& env_id) {
  if (env_id == "ad_matching") return 30;
  if (env_id == "inventory") return 25;
  return 50;
}

int episode_length(const ExperimentConfig& cfg) {
  return cfg.episode_length > 0 ? cfg.episode_length : default_episode_length(cfg.env_id);
}

ExperimentConfig parse_config(const std::string& text) {
  static const auto tables = build_tables();
  const IniData data = parse_ini(text);
  ExperimentConfig cfg;
  for (const auto& [section, keys] : data) {
    const auto table = tables.find(section);
    if (table == tables.end()) {
      if (section.empty() && keys.empty()) continue;
      throw ConfigError("unknown section [" + section + "]");
    }
    for (const auto& [key, value] : keys) {
      const auto setter = table->second.find(key);
      if (setter == table->second.end()) throw ConfigError("unknown key " + where(section, key));
      setter->second(cfg, value, where(section, key));
    }
  }

  const bool any_tabular = std::any_of(cfg.algorithms.begin(), cfg.algorithms.end(), [](const std::string& a) {
    return std::find(kTabularAlgos.begin(), kTabularAlgos.end(), a) != kTabularAlgos.end();
  });
  for (const auto& a : cfg.algorithms) {
    const bool tab = std::find(kTabularAlgos.begin(), kTabularAlgos.end(), a) != kTabularAlgos.end();
    const bool neu = std::find(kNeuralAlgos.begin(), kNeuralAlgos.end(), a) != kNeuralAlgos.end();
    if (!tab && !neu) throw ConfigError("unknown algorithm '" + a + "'");
    if (tab != any_tabular) throw ConfigError("tabular and neural algorithms cannot be mixed in one experiment");
  }
  cfg.neural.discounted_returns = cfg.discounted_returns;
  cfg.lambda.grid(1);
  cfg.neural_lambda.grid(1);
  cfg.source_hash = fnv1a64(text);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, const std::string& tag) {
  return mix64(mix64(master + 0x9e3779b97f4a7c15ULL * (index + 1)) ^ fnv1a64(tag));
}

EnvInstance build_env(const ExperimentConfig& cfg, std::uint64_t index) {
  Rng rng(derive_seed(cfg.master_seed, index, "env_build"));
  if (cfg.env_id == "ev_charging") return make_ev_charging(cfg.ev, rng);
  if (cfg.env_id == "inventory") return make_inventory(cfg.inventory, rng);
  if (cfg.env_id == "ad_matching") return make_ad_matching(cfg.ad, rng);
  if (cfg.env_id == "random") return EnvInstance{make_random_wcmdp(cfg.random, rng), {}};
  throw ConfigError("unknown env '" + cfg.env_id + "'");
}

}  // namespace wcmdp
