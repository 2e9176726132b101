#include "wcmdp/exact.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace wcmdp {

LambdaGrid::LambdaGrid(std::vector<std::vector<double>> multipliers) : multipliers_(std::move(multipliers)) {
  if (multipliers_.empty()) throw std::invalid_argument("lambda grid is empty");
  const std::size_t dim = multipliers_.front().size();
  if (dim == 0) throw std::invalid_argument("lambda grid entries are empty");
  std::set<std::vector<double>> seen;
  for (const auto& lambda : multipliers_) {
    if (lambda.size() != dim) throw std::invalid_argument("lambda grid entries differ in length");
    for (double v : lambda)
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("lambda grid entries must be nonnegative");
    if (!seen.insert(lambda).second) throw std::invalid_argument("lambda grid has duplicate entries");
  }
}

LambdaGrid LambdaGrid::scalar_range(double lo, double hi, double step, int n_constraints) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("lambda range: need step > 0 and hi >= lo");
  std::vector<std::vector<double>> out;
  // Index-based generation avoids accumulating rounding error in the values.
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::size_t k = 0; k < count; ++k) out.emplace_back(n_constraints, lo + step * static_cast<double>(k));
  return LambdaGrid(std::move(out));
}

bool within_exact_cap(const WcmdpSpec& spec) {
  const double pairs = static_cast<double>(spec.num_states()) * static_cast<double>(spec.num_actions());
  return pairs <= static_cast<double>(kMaxJointPairs);
}

namespace {

void require_cap(const WcmdpSpec& spec) {
  if (!within_exact_cap(spec)) throw std::length_error("joint problem exceeds the exact-solver cap");
}

// Contracts one subproblem digit at a time, depth-first over (x_k, a_k).
class NextValueContractor {
 public:
  NextValueContractor(const WcmdpSpec& spec, QTable& out) : spec_(spec), out_(out) {
    const int n = spec.num_subproblems();
    buffers_.resize(n);
    std::size_t size = 1;
    for (int k = 0; k < n; ++k) {
      buffers_[k].assign(size, 0.0);
      size *= spec.endo_size(k);
    }
    x_.assign(n, 0);
    a_.assign(n, 0);
  }

  void run(int w, const std::vector<double>& vbar) {
    w_ = w;
    contract(spec_.num_subproblems() - 1, vbar.data());
  }

 private:
  void contract(int k, const double* tensor) {
    const int X = spec_.endo_size(k);
    std::vector<double>& reduced = buffers_[k];
    const std::size_t outer = reduced.size();
    for (int x = 0; x < X; ++x) {
      x_[k] = x;
      for (int a = 0; a < spec_.action_size(k); ++a) {
        a_[k] = a;
        const auto row = spec_.endo_row(k, x, w_, a);
        std::fill(reduced.begin(), reduced.end(), 0.0);
        for (int y = 0; y < X; ++y) {
          const double p = row[y];
          if (p == 0.0) continue;
          for (std::size_t j = 0; j < outer; ++j) reduced[j] += p * tensor[j * X + y];
        }
        if (k == 0) {
          store(reduced[0]);
        } else {
          contract(k - 1, reduced.data());
        }
      }
    }
  }

  void store(double value) {
    std::size_t s = static_cast<std::size_t>(w_);
    std::size_t a = 0;
    for (int i = 0; i < spec_.num_subproblems(); ++i) {
      s = s * spec_.endo_size(i) + x_[i];
      a = a * spec_.action_size(i) + a_[i];
    }
    out_.at(s, a) = value;
  }

  const WcmdpSpec& spec_;
  QTable& out_;
  std::vector<std::vector<double>> buffers_;
  std::vector<int> x_;
  std::vector<int> a_;
  int w_ = 0;
};

std::vector<std::vector<std::size_t>> all_feasible_sets(const WcmdpSpec& spec) {
  std::vector<std::vector<std::size_t>> sets(spec.num_states());
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    sets[s] = feasible_action_indices(spec, spec.index_state(s));
    if (sets[s].empty()) throw std::invalid_argument("state " + std::to_string(s) + " has no feasible action");
  }
  return sets;
}

// Shared sweep loop for the joint solvers. `max_value` maps Q to V.
template <typename MaxFn>
ValueIterationResult joint_iteration(const WcmdpSpec& spec, const QTable& reward, MaxFn max_value,
                                     const SolveOptions& options) {
  ValueIterationResult result;
  result.q = QTable(spec.num_states(), spec.num_actions(), 0.0);
  const double gamma = spec.discount();
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    const std::vector<double> v = max_value(result.q);
    const QTable next = expected_next_value(spec, v);
    double residual = 0.0;
    auto& q = result.q.values();
    const auto& r = reward.values();
    const auto& e = next.values();
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double updated = r[k] + gamma * e[k];
      residual = std::max(residual, std::abs(updated - q[k]));
      q[k] = updated;
    }
    result.residuals.push_back(residual);
    if (residual <= options.tol) {
      result.v = max_value(result.q);
      return result;
    }
  }
  throw ConvergenceError("value iteration did not reach tolerance", result.residuals.back());
}

}  // namespace

QTable expected_next_value(const WcmdpSpec& spec, std::span<const double> v) {
  require_cap(spec);
  if (v.size() != spec.num_states()) throw std::invalid_argument("expected_next_value: value vector length");
  const int W = spec.exo_size();
  const std::size_t per_exo = spec.num_states() / W;
  QTable out(spec.num_states(), spec.num_actions());
  NextValueContractor contractor(spec, out);
  std::vector<double> vbar(per_exo);
  for (int w = 0; w < W; ++w) {
    std::fill(vbar.begin(), vbar.end(), 0.0);
    const auto q = spec.exo_row(w);
    for (int wn = 0; wn < W; ++wn) {
      if (q[wn] == 0.0) continue;
      const double* block = v.data() + static_cast<std::size_t>(wn) * per_exo;
      for (std::size_t j = 0; j < per_exo; ++j) vbar[j] += q[wn] * block[j];
    }
    contractor.run(w, vbar);
  }
  return out;
}

std::vector<double> feasible_max(const WcmdpSpec& spec, const QTable& q) {
  std::vector<double> v(spec.num_states());
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    const auto feasible = feasible_action_indices(spec, spec.index_state(s));
    if (feasible.empty()) throw std::invalid_argument("feasible_max: state without feasible action");
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a : feasible) best = std::max(best, q.at(s, a));
    v[s] = best;
  }
  return v;
}

ValueIterationResult value_iteration(const WcmdpSpec& spec, const SolveOptions& options) {
  require_cap(spec);
  const auto feasible = all_feasible_sets(spec);
  QTable reward(spec.num_states(), spec.num_actions());
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    const FullState state = spec.index_state(s);
    for (std::size_t a = 0; a < spec.num_actions(); ++a) {
      const FactoredAction action = spec.index_action(a);
      double total = 0.0;
      for (int i = 0; i < spec.num_subproblems(); ++i)
        total += spec.reward(i, state.endo[i], state.exo, action.parts[i]);
      reward.at(s, a) = total;
    }
  }
  auto max_value = [&feasible](const QTable& q) {
    std::vector<double> v(q.num_states());
    for (std::size_t s = 0; s < q.num_states(); ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a : feasible[s]) best = std::max(best, q.at(s, a));
      v[s] = best;
    }
    return v;
  };
  return joint_iteration(spec, reward, max_value, options);
}

ValueIterationResult relaxed_value_iteration(const WcmdpSpec& spec, std::span<const double> lambda,
                                             const SolveOptions& options) {
  require_cap(spec);
  const auto L = static_cast<std::size_t>(spec.num_constraints());
  if (lambda.size() != L) throw std::invalid_argument("lambda length must equal the number of constraints");
  QTable reward(spec.num_states(), spec.num_actions());
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    const FullState state = spec.index_state(s);
    const auto b = spec.rhs(state.exo);
    for (std::size_t a = 0; a < spec.num_actions(); ++a) {
      const FactoredAction action = spec.index_action(a);
      double total = 0.0;
      std::vector<double> slack(b.begin(), b.end());
      for (int i = 0; i < spec.num_subproblems(); ++i) {
        total += spec.reward(i, state.endo[i], state.exo, action.parts[i]);
        const auto d = spec.lhs(i, state.endo[i], state.exo, action.parts[i]);
        for (std::size_t l = 0; l < L; ++l) slack[l] -= d[l];
      }
      for (std::size_t l = 0; l < L; ++l) total += lambda[l] * slack[l];
      reward.at(s, a) = total;
    }
  }
  auto max_value = [](const QTable& q) {
    std::vector<double> v(q.num_states());
    for (std::size_t s = 0; s < q.num_states(); ++s) {
      const auto row = q.row(s);
      v[s] = *std::max_element(row.begin(), row.end());
    }
    return v;
  };
  return joint_iteration(spec, reward, max_value, options);
}

QTable solve_subproblem_exact(const WcmdpSpec& spec, int i, std::span<const double> lambda,
                              const SolveOptions& options) {
  const auto L = static_cast<std::size_t>(spec.num_constraints());
  if (i < 0 || i >= spec.num_subproblems()) throw std::out_of_range("subproblem index");
  if (lambda.size() != L) throw std::invalid_argument("lambda length must equal the number of constraints");
  for (double v : lambda)
    if (v < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  const int X = spec.endo_size(i);
  const int A = spec.action_size(i);
  const int W = spec.exo_size();
  const double gamma = spec.discount();

  QTable reward(spec.num_sub_states(i), A);
  for (int w = 0; w < W; ++w) {
    for (int x = 0; x < X; ++x) {
      for (int a = 0; a < A; ++a) {
        const auto d = spec.lhs(i, x, w, a);
        double penalty = 0.0;
        for (std::size_t l = 0; l < L; ++l) penalty += lambda[l] * d[l];
        reward.at(spec.sub_state_index(i, x, w), a) = spec.reward(i, x, w, a) - penalty;
      }
    }
  }

  QTable q(spec.num_sub_states(i), A, 0.0);
  std::vector<double> v(spec.num_sub_states(i));
  std::vector<double> mixed(spec.num_sub_states(i));  // E over w' given w, indexed (w, x')
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    for (std::size_t s = 0; s < v.size(); ++s) {
      const auto row = q.row(s);
      v[s] = *std::max_element(row.begin(), row.end());
    }
    std::fill(mixed.begin(), mixed.end(), 0.0);
    for (int w = 0; w < W; ++w) {
      const auto qrow = spec.exo_row(w);
      for (int wn = 0; wn < W; ++wn) {
        if (qrow[wn] == 0.0) continue;
        for (int xn = 0; xn < X; ++xn)
          mixed[spec.sub_state_index(i, xn, w)] += qrow[wn] * v[spec.sub_state_index(i, xn, wn)];
      }
    }
    double residual = 0.0;
    for (int w = 0; w < W; ++w) {
      for (int x = 0; x < X; ++x) {
        const std::size_t s = spec.sub_state_index(i, x, w);
        for (int a = 0; a < A; ++a) {
          const auto prow = spec.endo_row(i, x, w, a);
          double expect = 0.0;
          for (int xn = 0; xn < X; ++xn)
            if (prow[xn] != 0.0) expect += prow[xn] * mixed[spec.sub_state_index(i, xn, w)];
          const double updated = reward.at(s, a) + gamma * expect;
          residual = std::max(residual, std::abs(updated - q.at(s, a)));
          q.at(s, a) = updated;
        }
      }
    }
    if (residual <= options.tol) return q;
    if (iter + 1 == options.max_iters) throw ConvergenceError("subproblem solve did not reach tolerance", residual);
  }
  throw ConvergenceError("subproblem solve did not run", std::numeric_limits<double>::infinity());
}

std::vector<double> exact_B(const WcmdpSpec& spec, const SolveOptions& options) {
  const int W = spec.exo_size();
  const auto L = static_cast<std::size_t>(spec.num_constraints());
  const double gamma = spec.discount();
  std::vector<double> b_values(static_cast<std::size_t>(W) * L, 0.0);
  std::vector<double> next(b_values.size());
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    double residual = 0.0;
    for (int w = 0; w < W; ++w) {
      const auto q = spec.exo_row(w);
      const auto b = spec.rhs(w);
      for (std::size_t l = 0; l < L; ++l) {
        double expect = 0.0;
        for (int wn = 0; wn < W; ++wn) expect += q[wn] * b_values[static_cast<std::size_t>(wn) * L + l];
        const double updated = b[l] + gamma * expect;
        next[static_cast<std::size_t>(w) * L + l] = updated;
        residual = std::max(residual, std::abs(updated - b_values[static_cast<std::size_t>(w) * L + l]));
      }
    }
    b_values.swap(next);
    if (residual <= options.tol) return b_values;
  }
  throw ConvergenceError("B recursion did not reach tolerance", std::numeric_limits<double>::infinity());
}

QTable assemble_lagrangian(const WcmdpSpec& spec, std::span<const double> lambda, std::span<const double> b_values,
                           std::span<const QTable> sub_tables) {
  require_cap(spec);
  const int n = spec.num_subproblems();
  const auto L = static_cast<std::size_t>(spec.num_constraints());
  if (lambda.size() != L) throw std::invalid_argument("assemble: lambda length");
  if (b_values.size() != static_cast<std::size_t>(spec.exo_size()) * L) throw std::invalid_argument("assemble: B shape");
  if (sub_tables.size() != static_cast<std::size_t>(n)) throw std::invalid_argument("assemble: need one table per subproblem");
  for (int i = 0; i < n; ++i) {
    if (sub_tables[i].num_states() != spec.num_sub_states(i) ||
        sub_tables[i].num_actions() != static_cast<std::size_t>(spec.action_size(i)))
      throw std::invalid_argument("assemble: subproblem table dimension mismatch");
  }
  QTable out(spec.num_states(), spec.num_actions());
  for (std::size_t s = 0; s < spec.num_states(); ++s) {
    const FullState state = spec.index_state(s);
    double offset = 0.0;
    for (std::size_t l = 0; l < L; ++l) offset += lambda[l] * b_values[static_cast<std::size_t>(state.exo) * L + l];
    for (std::size_t a = 0; a < spec.num_actions(); ++a) {
      const FactoredAction action = spec.index_action(a);
      double total = offset;
      for (int i = 0; i < n; ++i)
        total += sub_tables[i].at(spec.sub_state_index(i, state.endo[i], state.exo), action.parts[i]);
      out.at(s, a) = total;
    }
  }
  return out;
}

DualBound dual_over_grid(std::span<const QTable> tables) {
  if (tables.empty()) throw std::invalid_argument("dual_over_grid: no tables");
  DualBound out{tables.front(), std::vector<std::size_t>(tables.front().values().size(), 0)};
  for (std::size_t k = 1; k < tables.size(); ++k) {
    if (tables[k].num_states() != out.bound.num_states() || tables[k].num_actions() != out.bound.num_actions())
      throw std::invalid_argument("dual_over_grid: table shapes differ");
    const auto& candidate = tables[k].values();
    auto& best = out.bound.values();
    for (std::size_t j = 0; j < best.size(); ++j) {
      if (candidate[j] < best[j]) {
        best[j] = candidate[j];
        out.argmin[j] = k;
      }
    }
  }
  return out;
}

DualBound lagrangian_dual_bound(const WcmdpSpec& spec, const LambdaGrid& grid, const SolveOptions& options) {
  if (grid.dimension() != spec.num_constraints()) throw std::invalid_argument("lambda grid dimension mismatch");
  const auto b_values = exact_B(spec, options);
  std::vector<QTable> assembled;
  assembled.reserve(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<QTable> subs;
    for (int i = 0; i < spec.num_subproblems(); ++i) subs.push_back(solve_subproblem_exact(spec, i, grid[k], options));
    assembled.push_back(assemble_lagrangian(spec, grid[k], b_values, subs));
  }
  return dual_over_grid(assembled);
}

}  // namespace wcmdp
