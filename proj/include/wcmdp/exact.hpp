#pragma once

// Ground-truth dynamic programming: value iteration on the joint problem,
// per-subproblem Lagrangian solves, the B(w) recursion, and assembly of the
// decomposed bound. These are oracles for small instances, not production
// solvers.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "wcmdp/core.hpp"

namespace wcmdp {

/// Dense action-value table, row-major (state, action).
class QTable {
 public:
  QTable() = default;
  QTable(std::size_t num_states, std::size_t num_actions, double fill = 0.0)
      : num_states_(num_states), num_actions_(num_actions), values_(num_states * num_actions, fill) {}

  std::size_t num_states() const { return num_states_; }
  std::size_t num_actions() const { return num_actions_; }

  double& at(std::size_t s, std::size_t a) { return values_[s * num_actions_ + a]; }
  double at(std::size_t s, std::size_t a) const { return values_[s * num_actions_ + a]; }
  std::span<double> row(std::size_t s) { return {values_.data() + s * num_actions_, num_actions_}; }
  std::span<const double> row(std::size_t s) const { return {values_.data() + s * num_actions_, num_actions_}; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  bool operator==(const QTable&) const = default;

 private:
  std::size_t num_states_ = 0;
  std::size_t num_actions_ = 0;
  std::vector<double> values_;
};

/// Finite set of nonnegative multipliers, each of length L.
class LambdaGrid {
 public:
  /// Throws std::invalid_argument if empty, negative, ragged or duplicated.
  explicit LambdaGrid(std::vector<std::vector<double>> multipliers);

  /// {lo, lo+step, ..., hi} broadcast across all L components.
  static LambdaGrid scalar_range(double lo, double hi, double step, int n_constraints);

  std::size_t size() const { return multipliers_.size(); }
  int dimension() const { return static_cast<int>(multipliers_.front().size()); }
  std::span<const double> operator[](std::size_t k) const { return multipliers_[k]; }
  const std::vector<std::vector<double>>& multipliers() const { return multipliers_; }

 private:
  std::vector<std::vector<double>> multipliers_;
};

struct SolveOptions {
  double tol = 1e-10;
  std::size_t max_iters = 100000;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Joint-space solvers refuse instances with more (state, action) pairs.
inline constexpr std::size_t kMaxJointPairs = 1'000'000;

bool within_exact_cap(const WcmdpSpec& spec);

struct ValueIterationResult {
  QTable q;                        // indexed by state_index / action_index
  std::vector<double> v;           // max over feasible actions
  std::vector<double> residuals;   // sup-norm change per sweep
};

/// Q*(s,a) = r(s,a) + gamma E[max_{a' in A(s')} Q*(s',a')]. Values are produced
/// for every joint action, feasible or not; V* takes the feasible max.
/// Throws ConvergenceError after max_iters, std::invalid_argument if a state
/// has no feasible action, std::length_error above kMaxJointPairs.
ValueIterationResult value_iteration(const WcmdpSpec& spec, const SolveOptions& options = {});

/// Value iteration on the relaxed joint problem: reward
/// r(s,a) + lambda^T (b(w) - sum_i d(s_i,a_i)) and an unconstrained max.
/// `v` holds the unconstrained max.
ValueIterationResult relaxed_value_iteration(const WcmdpSpec& spec, std::span<const double> lambda,
                                             const SolveOptions& options = {});

/// Q^lambda_i over (sub_state_index(i, x, w), a_i) with reward
/// r_i - lambda^T d and an unconstrained max over A_i.
QTable solve_subproblem_exact(const WcmdpSpec& spec, int i, std::span<const double> lambda,
                              const SolveOptions& options = {});

/// B(w) = b(w) + gamma E[B(w')], returned row-major (w, l).
std::vector<double> exact_B(const WcmdpSpec& spec, const SolveOptions& options = {});

/// Q^lambda(s,a) = lambda^T B(w) + sum_i Q^lambda_i(s_i, a_i) for every joint
/// pair, including infeasible ones.
QTable assemble_lagrangian(const WcmdpSpec& spec, std::span<const double> lambda, std::span<const double> b_values,
                           std::span<const QTable> sub_tables);

struct DualBound {
  QTable bound;
  std::vector<std::size_t> argmin;  // grid index per (s,a), first on ties
};

/// Pointwise minimum over per-multiplier tables of equal shape.
DualBound dual_over_grid(std::span<const QTable> tables);

/// Lagrangian bound over a grid in one call (subproblem solves, B, assembly, min).
DualBound lagrangian_dual_bound(const WcmdpSpec& spec, const LambdaGrid& grid, const SolveOptions& options = {});

/// V(s) = max over feasible a of q(s,a).
std::vector<double> feasible_max(const WcmdpSpec& spec, const QTable& q);

/// E[V(s') | s, a] for every joint pair, as a (state, action) table.
QTable expected_next_value(const WcmdpSpec& spec, std::span<const double> v);

}  // namespace wcmdp
