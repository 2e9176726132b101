#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls the solvers under test; they only read model tables through the spec
// accessors.

#include <functional>
#include <span>
#include <vector>

#include "wcmdp/core.hpp"

namespace wcmdp::testing {

/// Model with the given shape, uniform kernels, zero rewards, d = 0, b = 0.
WcmdpModel blank_model(std::vector<int> endo_sizes, std::vector<int> action_sizes, int exo_size, int n_constraints,
                       double discount = 0.9);

/// Gaussian elimination with partial pivoting on a dense row-major n x n system.
std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b, std::size_t n);

/// P(s' | s, a) over joint indices, computed by direct products of kernel rows.
double joint_transition(const WcmdpSpec& spec, const FullState& s, const FactoredAction& a, const FullState& next);

/// Componentwise maximum over every stationary deterministic feasible policy
/// of its exact value (each policy evaluated by a dense solve).
std::vector<double> brute_force_values(const WcmdpSpec& spec);

/// Plain value iteration on the relaxed joint problem with reward
/// r(s,a) + lambda^T (b(w) - sum_i d(s_i,a_i)) and an unconstrained max.
/// Returns Q row-major (state, action).
std::vector<double> naive_relaxed_q(const WcmdpSpec& spec, std::span<const double> lambda, double tol = 1e-12);

/// Plain value iteration for subproblem i with reward r_i - lambda^T d.
/// Returns Q row-major (w * X_i + x, a_i).
std::vector<double> naive_subproblem_q(const WcmdpSpec& spec, int i, std::span<const double> lambda,
                                       double tol = 1e-12);

/// Upper quantile of the chi-square distribution (Wilson-Hilferty), for
/// upper-tail probability 0.001.
double chi_square_critical_999(int dof);

double chi_square_stat(std::span<const double> observed, std::span<const double> expected);

/// Central differences of f at x, step h.
std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::vector<double> x, double h);

/// ||a - b|| / max(||a||, ||b||, floor).
double relative_gap(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace wcmdp::testing
