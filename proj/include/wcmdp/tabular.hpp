#pragma once

// Tabular learners: Q-learning, Double Q-learning, a Lagrange-policy learner
// and weakly coupled Q-learning (subagents + B estimate + bound projection).

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wcmdp/core.hpp"
#include "wcmdp/exact.hpp"
#include "wcmdp/rng.hpp"

namespace wcmdp {

/// Visit-count learning rate: 1 / visits^exponent, or a constant.
struct StepSchedule {
  enum class Kind { kPolynomial, kConstant };
  Kind kind = Kind::kPolynomial;
  double exponent = 0.4;
  double constant = 0.1;

  /// Rate for the `visits`-th visit (visits >= 1). Always in (0, 1] for the
  /// polynomial kind.
  double rate(std::uint64_t visits) const;
};

class VisitCounter {
 public:
  explicit VisitCounter(std::size_t keys = 0) : counts_(keys, 0) {}
  std::uint64_t increment(std::size_t key) { return ++counts_[key]; }
  std::uint64_t count(std::size_t key) const { return counts_[key]; }
  std::size_t size() const { return counts_.size(); }

 private:
  std::vector<std::uint32_t> counts_;
};

// ---------------------------------------------------------------------------
// Single update rules

/// r + gamma * max over feasible a' at s' of q(s', a').
double ql_target(const WcmdpSpec& spec, const QTable& q, const Transition& t);

/// Q(s,a) += alpha (target - Q(s,a)), target from ql_target.
void ql_update(QTable& q, const WcmdpSpec& spec, const Transition& t, double alpha);

/// Updates `selected` towards r + gamma * evaluate(s', argmax_{a'} selected(s', a')),
/// the argmax taken over feasible actions at s'.
void double_ql_update(QTable& selected, const QTable& evaluate, const WcmdpSpec& spec, const Transition& t,
                      double alpha);

/// Q^lambda_i tables for every (multiplier, subproblem) pair, indexed by
/// (sub_state_index, a_i).
class SubagentBank {
 public:
  SubagentBank(const WcmdpSpec& spec, const LambdaGrid& grid, double fill = 0.0);

  void randomize(Rng& rng);  // Uniform(0,1) entries

  std::size_t grid_size() const { return grid_size_; }
  int num_subproblems() const { return n_; }
  QTable& table(std::size_t k, int i) { return tables_[k * n_ + i]; }
  const QTable& table(std::size_t k, int i) const { return tables_[k * n_ + i]; }

 private:
  std::size_t grid_size_;
  int n_;
  std::vector<QTable> tables_;
};

/// Q^lambda_i(s_i,a_i) += beta_i (r_i - lambda^T d + gamma max_{a'_i} Q^lambda_i(s'_i, a'_i) - Q^lambda_i(s_i,a_i))
/// for every subproblem i at multiplier index k. `betas` holds one rate per
/// subproblem.
void subagent_update(SubagentBank& bank, const WcmdpSpec& spec, const LambdaGrid& grid, std::size_t k,
                     std::span<const SubTransition> parts, std::span<const double> betas);

/// Stochastic estimate of B(w), row-major (w, l).
struct BTable {
  std::vector<double> values;
  int n_constraints = 1;

  BTable() = default;
  BTable(int exo_size, int n_constraints) : values(static_cast<std::size_t>(exo_size) * n_constraints, 0.0),
                                            n_constraints(n_constraints) {}
  std::span<const double> at(int w) const {
    return {values.data() + static_cast<std::size_t>(w) * n_constraints, static_cast<std::size_t>(n_constraints)};
  }
};

/// B(w) += eta (b(w) + gamma B(w') - B(w)).
void b_update(BTable& table, int w, std::span<const double> rhs, int w_next, double gamma, double eta);

/// lambda^T B(w) + sum_i Q^lambda_i(s_i, a_i) at multiplier index k.
double assembled_value(const SubagentBank& bank, const BTable& b_table, const LambdaGrid& grid,
                       const WcmdpSpec& spec, std::size_t k, const FullState& s, const FactoredAction& a);

/// Minimum of assembled_value over the grid.
double bound_at(const SubagentBank& bank, const BTable& b_table, const LambdaGrid& grid, const WcmdpSpec& spec,
                const FullState& s, const FactoredAction& a);

/// Argmax over feasible actions of sum_i Q^lambda_i(s_i, a_i) at multiplier
/// index k; first maximizer on ties. Throws std::runtime_error when A(s) is
/// empty.
FactoredAction lagrange_policy_action(const SubagentBank& bank, const WcmdpSpec& spec, std::size_t k,
                                      const FullState& s);

/// Multiplier index minimizing lambda^T B(w) + sum_i max_{a_i} Q^lambda_i(s_i, a_i).
std::size_t lagrange_multiplier_choice(const SubagentBank& bank, const BTable& b_table, const LambdaGrid& grid,
                                       const WcmdpSpec& spec, const FullState& s);

/// With probability epsilon a uniform draw from `feasible`, otherwise the
/// first maximizer of `values` over it. Always consumes one uniform draw, plus
/// one index draw when exploring. Throws std::runtime_error on an empty set.
std::size_t epsilon_greedy_index(std::span<const std::size_t> feasible, std::span<const double> values,
                                 double epsilon, Rng& rng);

// ---------------------------------------------------------------------------
// Agents

enum class ProjectionMode { kDisabled, kVisitedPair, kFullSweep };

struct TabularConfig {
  StepSchedule alpha;
  StepSchedule beta;
  StepSchedule eta;
  double epsilon_exponent = 0.4;  // epsilon(s) = 1 / visits(s)^e
  ProjectionMode projection = ProjectionMode::kVisitedPair;
  bool random_init = true;        // Uniform(init_low, init_high) initial tables
  double init_low = 0.0;
  double init_high = 1.0;
};

/// Uniform train-step interface consumed by the experiment harness.
class TabularAgent {
 public:
  virtual ~TabularAgent() = default;
  virtual std::string name() const = 0;
  /// Epsilon-greedy over feasible actions; increments the state visit count.
  virtual FactoredAction act(const FullState& s, Rng& rng) = 0;
  virtual void observe(const Transition& t) = 0;
  /// Whether q_value defines a full action-value estimate.
  virtual bool has_q() const { return true; }
  virtual double q_value(std::size_t s, std::size_t a) const = 0;
};

class QLearningAgent : public TabularAgent {
 public:
  QLearningAgent(const WcmdpSpec& spec, TabularConfig config, Rng& init_rng);
  std::string name() const override { return "ql"; }
  FactoredAction act(const FullState& s, Rng& rng) override;
  void observe(const Transition& t) override;
  double q_value(std::size_t s, std::size_t a) const override { return q_.at(s, a); }
  const QTable& q() const { return q_; }

 private:
  const WcmdpSpec& spec_;
  TabularConfig config_;
  QTable q_;
  VisitCounter pair_visits_;
  VisitCounter state_visits_;
};

class DoubleQLearningAgent : public TabularAgent {
 public:
  /// `coin_rng` decides which table each update modifies.
  DoubleQLearningAgent(const WcmdpSpec& spec, TabularConfig config, Rng& init_rng, std::uint64_t coin_seed);
  std::string name() const override { return "double_ql"; }
  FactoredAction act(const FullState& s, Rng& rng) override;
  void observe(const Transition& t) override;
  double q_value(std::size_t s, std::size_t a) const override { return 0.5 * (qa_.at(s, a) + qb_.at(s, a)); }

 private:
  const WcmdpSpec& spec_;
  TabularConfig config_;
  QTable qa_;
  QTable qb_;
  VisitCounter visits_a_;
  VisitCounter visits_b_;
  VisitCounter state_visits_;
  Rng coin_;
};

/// Subagent state shared by the Lagrange-policy learner and WCQL.
class SubagentLearner {
 public:
  SubagentLearner(const WcmdpSpec& spec, LambdaGrid grid, TabularConfig config, Rng& init_rng);

  /// Subagent updates for every multiplier, then the B update.
  void update(const Transition& t);

  const SubagentBank& bank() const { return bank_; }
  const BTable& b_table() const { return b_table_; }
  const LambdaGrid& grid() const { return grid_; }

 private:
  const WcmdpSpec& spec_;
  LambdaGrid grid_;
  TabularConfig config_;
  SubagentBank bank_;
  BTable b_table_;
  std::vector<VisitCounter> sub_visits_;  // per subproblem, keyed by sub pair index
  VisitCounter exo_visits_;
};

class LagrangeQLearningAgent : public TabularAgent {
 public:
  LagrangeQLearningAgent(const WcmdpSpec& spec, LambdaGrid grid, TabularConfig config, Rng& init_rng);
  std::string name() const override { return "lagrange_ql"; }
  FactoredAction act(const FullState& s, Rng& rng) override;
  void observe(const Transition& t) override { learner_.update(t); }
  bool has_q() const override { return false; }
  double q_value(std::size_t, std::size_t) const override { return 0.0; }
  const SubagentLearner& learner() const { return learner_; }

 private:
  const WcmdpSpec& spec_;
  TabularConfig config_;
  SubagentLearner learner_;
  VisitCounter state_visits_;
};

class WcqlAgent : public TabularAgent {
 public:
  /// `init_rng` first fills the main table (same draws as QLearningAgent),
  /// then the subagent bank from `bank_rng`.
  WcqlAgent(const WcmdpSpec& spec, LambdaGrid grid, TabularConfig config, Rng& init_rng, Rng& bank_rng);
  std::string name() const override { return "wcql"; }
  FactoredAction act(const FullState& s, Rng& rng) override;
  /// One WCQL step: subagents, B, bound, standard update, projection.
  void observe(const Transition& t) override;
  double q_value(std::size_t s, std::size_t a) const override { return q_.at(s, a); }

  double bound(const FullState& s, const FactoredAction& a) const;
  const QTable& q() const { return q_; }
  const SubagentLearner& learner() const { return learner_; }

  /// Value of Q_{n+1} before projection at the last visited pair.
  double last_unprojected() const { return last_unprojected_; }
  double last_bound() const { return last_bound_; }
  std::uint64_t projections() const { return projections_; }
  std::uint64_t violations() const { return violations_; }

 private:
  const WcmdpSpec& spec_;
  TabularConfig config_;
  QTable q_;
  VisitCounter pair_visits_;
  VisitCounter state_visits_;
  SubagentLearner learner_;
  double last_unprojected_ = 0.0;
  double last_bound_ = 0.0;
  std::uint64_t projections_ = 0;
  std::uint64_t violations_ = 0;
};

/// Writes state_index,action_index,value rows with a header.
void write_qtable_csv(std::ostream& out, const QTable& q);

}  // namespace wcmdp
