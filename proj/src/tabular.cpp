#include "wcmdp/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace wcmdp {

double StepSchedule::rate(std::uint64_t visits) const {
  if (kind == Kind::kConstant) return constant;
  if (visits == 0) throw std::invalid_argument("step schedule: visits must be positive");
  return 1.0 / std::pow(static_cast<double>(visits), exponent);
}

namespace {

void fill_uniform(QTable& q, Rng& rng, double lo = 0.0, double hi = 1.0) {
  for (double& v : q.values()) v = rng.uniform(lo, hi);
}

double max_over(const QTable& q, std::size_t s, std::span<const std::size_t> actions) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t a : actions) best = std::max(best, q.at(s, a));
  return best;
}

std::vector<double> row_copy(const QTable& q, std::size_t s) {
  const auto row = q.row(s);
  return {row.begin(), row.end()};
}

}  // namespace

double ql_target(const WcmdpSpec& spec, const QTable& q, const Transition& t) {
  const auto feasible = feasible_action_indices(spec, t.next_state);
  if (feasible.empty()) throw std::runtime_error("next state has no feasible action");
  return t.total_reward() + spec.discount() * max_over(q, spec.state_index(t.next_state), feasible);
}

void ql_update(QTable& q, const WcmdpSpec& spec, const Transition& t, double alpha) {
  const double target = ql_target(spec, q, t);
  double& value = q.at(spec.state_index(t.state), spec.action_index(t.action));
  value += alpha * (target - value);
}

void double_ql_update(QTable& selected, const QTable& evaluate, const WcmdpSpec& spec, const Transition& t,
                      double alpha) {
  const auto feasible = feasible_action_indices(spec, t.next_state);
  if (feasible.empty()) throw std::runtime_error("next state has no feasible action");
  const std::size_t next = spec.state_index(t.next_state);
  std::size_t best = feasible.front();
  for (std::size_t a : feasible)
    if (selected.at(next, a) > selected.at(next, best)) best = a;
  const double target = t.total_reward() + spec.discount() * evaluate.at(next, best);
  double& value = selected.at(spec.state_index(t.state), spec.action_index(t.action));
  value += alpha * (target - value);
}

SubagentBank::SubagentBank(const WcmdpSpec& spec, const LambdaGrid& grid, double fill)
    : grid_size_(grid.size()), n_(spec.num_subproblems()) {
  if (grid.dimension() != spec.num_constraints()) throw std::invalid_argument("lambda grid dimension mismatch");
  tables_.reserve(grid_size_ * n_);
  for (std::size_t k = 0; k < grid_size_; ++k)
    for (int i = 0; i < n_; ++i) tables_.emplace_back(spec.num_sub_states(i), spec.action_size(i), fill);
}

void SubagentBank::randomize(Rng& rng) {
  for (QTable& t : tables_) fill_uniform(t, rng);
}

void subagent_update(SubagentBank& bank, const WcmdpSpec& spec, const LambdaGrid& grid, std::size_t k,
                     std::span<const SubTransition> parts, std::span<const double> betas) {
  const auto lambda = grid[k];
  const double gamma = spec.discount();
  for (int i = 0; i < spec.num_subproblems(); ++i) {
    const SubTransition& sub = parts[i];
    QTable& q = bank.table(k, i);
    double penalty = 0.0;
    for (std::size_t l = 0; l < lambda.size(); ++l) penalty += lambda[l] * sub.lhs[l];
    const auto next_row = q.row(spec.sub_state_index(i, sub.next_endo, sub.next_exo));
    const double next_max = *std::max_element(next_row.begin(), next_row.end());
    double& value = q.at(spec.sub_state_index(i, sub.endo, sub.exo), sub.action);
    value += betas[i] * (sub.reward - penalty + gamma * next_max - value);
  }
}

void b_update(BTable& table, int w, std::span<const double> rhs, int w_next, double gamma, double eta) {
  const auto L = static_cast<std::size_t>(table.n_constraints);
  for (std::size_t l = 0; l < L; ++l) {
    double& value = table.values[static_cast<std::size_t>(w) * L + l];
    const double next = table.values[static_cast<std::size_t>(w_next) * L + l];
    value += eta * (rhs[l] + gamma * next - value);
  }
}

double assembled_value(const SubagentBank& bank, const BTable& b_table, const LambdaGrid& grid,
                       const WcmdpSpec& spec, std::size_t k, const FullState& s, const FactoredAction& a) {
  const auto lambda = grid[k];
  const auto b = b_table.at(s.exo);
  double total = 0.0;
  for (std::size_t l = 0; l < lambda.size(); ++l) total += lambda[l] * b[l];
  for (int i = 0; i < spec.num_subproblems(); ++i)
    total += bank.table(k, i).at(spec.sub_state_index(i, s.endo[i], s.exo), a.parts[i]);
  return total;
}

double bound_at(const SubagentBank& bank, const BTable& b_table, const LambdaGrid& grid, const WcmdpSpec& spec,
                const FullState& s, const FactoredAction& a) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.size(); ++k)
    best = std::min(best, assembled_value(bank, b_table, grid, spec, k, s, a));
  return best;
}

FactoredAction lagrange_policy_action(const SubagentBank& bank, const WcmdpSpec& spec, std::size_t k,
                                      const FullState& s) {
  const auto feasible = feasible_action_indices(spec, s);
  if (feasible.empty()) throw std::runtime_error("empty feasible set");
  std::size_t best = feasible.front();
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t index : feasible) {
    const FactoredAction a = spec.index_action(index);
    double value = 0.0;
    for (int i = 0; i < spec.num_subproblems(); ++i)
      value += bank.table(k, i).at(spec.sub_state_index(i, s.endo[i], s.exo), a.parts[i]);
    if (value > best_value) {
      best_value = value;
      best = index;
    }
  }
  return spec.index_action(best);
}

std::size_t lagrange_multiplier_choice(const SubagentBank& bank, const BTable& b_table, const LambdaGrid& grid,
                                       const WcmdpSpec& spec, const FullState& s) {
  std::size_t best = 0;
  double best_value = std::numeric_limits<double>::infinity();
  const auto b = b_table.at(s.exo);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto lambda = grid[k];
    double value = 0.0;
    for (std::size_t l = 0; l < lambda.size(); ++l) value += lambda[l] * b[l];
    for (int i = 0; i < spec.num_subproblems(); ++i) {
      const auto row = bank.table(k, i).row(spec.sub_state_index(i, s.endo[i], s.exo));
      value += *std::max_element(row.begin(), row.end());
    }
    if (value < best_value) {
      best_value = value;
      best = k;
    }
  }
  return best;
}

std::size_t epsilon_greedy_index(std::span<const std::size_t> feasible, std::span<const double> values,
                                 double epsilon, Rng& rng) {
  if (feasible.empty()) throw std::runtime_error("empty feasible set");
  if (rng.uniform() < epsilon) return feasible[rng.uniform_index(feasible.size())];
  std::size_t best = feasible.front();
  for (std::size_t a : feasible)
    if (values[a] > values[best]) best = a;
  return best;
}

// ---------------------------------------------------------------------------

namespace {

double exploration_rate(const TabularConfig& config, std::uint64_t visits) {
  return 1.0 / std::pow(static_cast<double>(visits), config.epsilon_exponent);
}

}  // namespace

QLearningAgent::QLearningAgent(const WcmdpSpec& spec, TabularConfig config, Rng& init_rng)
    : spec_(spec),
      config_(config),
      q_(spec.num_states(), spec.num_actions(), 0.0),
      pair_visits_(spec.num_states() * spec.num_actions()),
      state_visits_(spec.num_states()) {
  if (config_.random_init) fill_uniform(q_, init_rng, config_.init_low, config_.init_high);
}

FactoredAction QLearningAgent::act(const FullState& s, Rng& rng) {
  const std::size_t index = spec_.state_index(s);
  const double epsilon = exploration_rate(config_, state_visits_.increment(index));
  const auto feasible = feasible_action_indices(spec_, s);
  return spec_.index_action(epsilon_greedy_index(feasible, q_.row(index), epsilon, rng));
}

void QLearningAgent::observe(const Transition& t) {
  const std::size_t pair = spec_.state_index(t.state) * spec_.num_actions() + spec_.action_index(t.action);
  ql_update(q_, spec_, t, config_.alpha.rate(pair_visits_.increment(pair)));
}

DoubleQLearningAgent::DoubleQLearningAgent(const WcmdpSpec& spec, TabularConfig config, Rng& init_rng,
                                           std::uint64_t coin_seed)
    : spec_(spec),
      config_(config),
      qa_(spec.num_states(), spec.num_actions(), 0.0),
      qb_(spec.num_states(), spec.num_actions(), 0.0),
      visits_a_(spec.num_states() * spec.num_actions()),
      visits_b_(spec.num_states() * spec.num_actions()),
      state_visits_(spec.num_states()),
      coin_(coin_seed) {
  if (config_.random_init) {
    fill_uniform(qa_, init_rng, config_.init_low, config_.init_high);
    fill_uniform(qb_, init_rng, config_.init_low, config_.init_high);
  }
}

FactoredAction DoubleQLearningAgent::act(const FullState& s, Rng& rng) {
  const std::size_t index = spec_.state_index(s);
  const double epsilon = exploration_rate(config_, state_visits_.increment(index));
  const auto feasible = feasible_action_indices(spec_, s);
  std::vector<double> combined = row_copy(qa_, index);
  const auto other = qb_.row(index);
  for (std::size_t a = 0; a < combined.size(); ++a) combined[a] += other[a];
  return spec_.index_action(epsilon_greedy_index(feasible, combined, epsilon, rng));
}

void DoubleQLearningAgent::observe(const Transition& t) {
  const std::size_t pair = spec_.state_index(t.state) * spec_.num_actions() + spec_.action_index(t.action);
  if (coin_.bernoulli(0.5)) {
    double_ql_update(qa_, qb_, spec_, t, config_.alpha.rate(visits_a_.increment(pair)));
  } else {
    double_ql_update(qb_, qa_, spec_, t, config_.alpha.rate(visits_b_.increment(pair)));
  }
}

SubagentLearner::SubagentLearner(const WcmdpSpec& spec, LambdaGrid grid, TabularConfig config, Rng& init_rng)
    : spec_(spec),
      grid_(std::move(grid)),
      config_(config),
      bank_(spec, grid_, 0.0),
      b_table_(spec.exo_size(), spec.num_constraints()),
      exo_visits_(spec.exo_size()) {
  if (config_.random_init) bank_.randomize(init_rng);
  for (int i = 0; i < spec.num_subproblems(); ++i)
    sub_visits_.emplace_back(spec.num_sub_states(i) * spec.action_size(i));
}

void SubagentLearner::update(const Transition& t) {
  const auto parts = split_transition(spec_, t);
  std::vector<double> betas(parts.size());
  for (int i = 0; i < spec_.num_subproblems(); ++i) {
    // One shared tau drives every multiplier, so the per-(s_i, a_i, lambda)
    // counts coincide and are stored once per subproblem pair.
    const std::size_t key = spec_.sub_pair_index(i, parts[i].endo, parts[i].exo, parts[i].action);
    betas[i] = config_.beta.rate(sub_visits_[i].increment(key));
  }
  for (std::size_t k = 0; k < grid_.size(); ++k) subagent_update(bank_, spec_, grid_, k, parts, betas);
  const double eta = config_.eta.rate(exo_visits_.increment(t.state.exo));
  b_update(b_table_, t.state.exo, t.rhs, t.next_state.exo, spec_.discount(), eta);
}

LagrangeQLearningAgent::LagrangeQLearningAgent(const WcmdpSpec& spec, LambdaGrid grid, TabularConfig config,
                                               Rng& init_rng)
    : spec_(spec), config_(config), learner_(spec, std::move(grid), config, init_rng), state_visits_(spec.num_states()) {}

FactoredAction LagrangeQLearningAgent::act(const FullState& s, Rng& rng) {
  const std::size_t index = spec_.state_index(s);
  const double epsilon = exploration_rate(config_, state_visits_.increment(index));
  const auto feasible = feasible_action_indices(spec_, s);
  const std::size_t k = lagrange_multiplier_choice(learner_.bank(), learner_.b_table(), learner_.grid(), spec_, s);
  std::vector<double> values(spec_.num_actions(), 0.0);
  for (std::size_t a : feasible) {
    const FactoredAction action = spec_.index_action(a);
    for (int i = 0; i < spec_.num_subproblems(); ++i)
      values[a] += learner_.bank().table(k, i).at(spec_.sub_state_index(i, s.endo[i], s.exo), action.parts[i]);
  }
  return spec_.index_action(epsilon_greedy_index(feasible, values, epsilon, rng));
}

WcqlAgent::WcqlAgent(const WcmdpSpec& spec, LambdaGrid grid, TabularConfig config, Rng& init_rng, Rng& bank_rng)
    : spec_(spec),
      config_(config),
      q_(spec.num_states(), spec.num_actions(), 0.0),
      pair_visits_(spec.num_states() * spec.num_actions()),
      state_visits_(spec.num_states()),
      learner_(spec, std::move(grid), config, bank_rng) {
  if (config_.random_init) fill_uniform(q_, init_rng, config_.init_low, config_.init_high);
}

FactoredAction WcqlAgent::act(const FullState& s, Rng& rng) {
  const std::size_t index = spec_.state_index(s);
  const double epsilon = exploration_rate(config_, state_visits_.increment(index));
  const auto feasible = feasible_action_indices(spec_, s);
  return spec_.index_action(epsilon_greedy_index(feasible, q_.row(index), epsilon, rng));
}

double WcqlAgent::bound(const FullState& s, const FactoredAction& a) const {
  return bound_at(learner_.bank(), learner_.b_table(), learner_.grid(), spec_, s, a);
}

void WcqlAgent::observe(const Transition& t) {
  learner_.update(t);
  const std::size_t s = spec_.state_index(t.state);
  const std::size_t a = spec_.action_index(t.action);
  const std::size_t pair = s * spec_.num_actions() + a;
  ql_update(q_, spec_, t, config_.alpha.rate(pair_visits_.increment(pair)));
  last_unprojected_ = q_.at(s, a);

  switch (config_.projection) {
    case ProjectionMode::kDisabled:
      return;
    case ProjectionMode::kVisitedPair: {
      last_bound_ = bound(t.state, t.action);
      if (last_bound_ < q_.at(s, a)) {
        q_.at(s, a) = last_bound_;
        ++projections_;
      }
      break;
    }
    case ProjectionMode::kFullSweep: {
      last_bound_ = bound(t.state, t.action);
      for (std::size_t si = 0; si < spec_.num_states(); ++si) {
        const FullState state = spec_.index_state(si);
        for (std::size_t ai = 0; ai < spec_.num_actions(); ++ai) {
          const double b = bound(state, spec_.index_action(ai));
          if (b < q_.at(si, ai)) {
            q_.at(si, ai) = b;
            ++projections_;
          }
        }
      }
      break;
    }
  }
  if (!(q_.at(s, a) <= last_bound_ + 1e-12)) {
    ++violations_;
    throw std::logic_error("projection invariant violated");
  }
}

void write_qtable_csv(std::ostream& out, const QTable& q) {
  out << "state,action,value\n";
  char buffer[64];
  for (std::size_t s = 0; s < q.num_states(); ++s) {
    for (std::size_t a = 0; a < q.num_actions(); ++a) {
      std::snprintf(buffer, sizeof buffer, "%.17g", q.at(s, a));
      out << s << ',' << a << ',' << buffer << '\n';
    }
  }
}

}  // namespace wcmdp
