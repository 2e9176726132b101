#include "wcmdp/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace wcmdp {

namespace {

constexpr double kRowTolerance = 1e-12;

void check_row(std::span<const double> row, const std::string& what) {
  double total = 0.0;
  for (double p : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument(what + ": negative or non-finite probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kRowTolerance) throw std::invalid_argument(what + ": row does not sum to 1");
}

}  // namespace

double Transition::total_reward() const {
  double total = 0.0;
  for (double r : rewards) total += r;
  return total;
}

WcmdpSpec::WcmdpSpec(WcmdpModel model) : m_(std::move(model)) {
  const std::size_t n = m_.endo_sizes.size();
  const auto L = static_cast<std::size_t>(m_.n_constraints);
  const auto W = static_cast<std::size_t>(m_.exo_size);
  if (n == 0) throw std::invalid_argument("model needs at least one subproblem");
  if (m_.action_sizes.size() != n || m_.endo_kernels.size() != n || m_.rewards.size() != n ||
      m_.constraint_lhs.size() != n)
    throw std::invalid_argument("per-subproblem table count mismatch");
  if (m_.n_constraints < 1) throw std::invalid_argument("need at least one linking constraint");
  if (m_.exo_size < 1) throw std::invalid_argument("exogenous space is empty");
  if (!(m_.discount >= 0.0 && m_.discount < 1.0)) throw std::invalid_argument("discount must lie in [0,1)");
  if (m_.exo_kernel.size() != W * W) throw std::invalid_argument("exo_kernel shape mismatch");
  if (m_.constraint_rhs.size() != W * L) throw std::invalid_argument("constraint_rhs shape mismatch");
  for (std::size_t w = 0; w < W; ++w) check_row({m_.exo_kernel.data() + w * W, W}, "exo_kernel");

  for (std::size_t i = 0; i < n; ++i) {
    const auto X = static_cast<std::size_t>(m_.endo_sizes[i]);
    const auto A = static_cast<std::size_t>(m_.action_sizes[i]);
    if (X == 0 || A == 0) throw std::invalid_argument("empty subproblem space");
    const std::size_t pairs = X * W * A;
    if (m_.endo_kernels[i].size() != pairs * X) throw std::invalid_argument("endo_kernel shape mismatch");
    if (m_.rewards[i].size() != pairs) throw std::invalid_argument("rewards shape mismatch");
    if (m_.constraint_lhs[i].size() != pairs * L) throw std::invalid_argument("constraint_lhs shape mismatch");
    for (std::size_t p = 0; p < pairs; ++p) check_row({m_.endo_kernels[i].data() + p * X, X}, "endo_kernel");
    for (double r : m_.rewards[i])
      if (!std::isfinite(r)) throw std::invalid_argument("non-finite reward");
    num_states_ *= X;
    num_actions_ *= A;
    max_endo_ = std::max(max_endo_, static_cast<int>(X));
    max_action_ = std::max(max_action_, static_cast<int>(A));
  }
  num_states_ *= W;
  if (m_.initial_state.endo.empty()) m_.initial_state.endo.assign(n, 0);
  if (!valid_state(m_.initial_state)) throw std::invalid_argument("initial state out of range");
}

std::span<const double> WcmdpSpec::lhs(int i, int x, int w, int a) const {
  const auto L = static_cast<std::size_t>(m_.n_constraints);
  return {m_.constraint_lhs[i].data() + sub_pair_index(i, x, w, a) * L, L};
}

std::span<const double> WcmdpSpec::rhs(int w) const {
  const auto L = static_cast<std::size_t>(m_.n_constraints);
  return {m_.constraint_rhs.data() + static_cast<std::size_t>(w) * L, L};
}

std::span<const double> WcmdpSpec::endo_row(int i, int x, int w, int a) const {
  const auto X = static_cast<std::size_t>(m_.endo_sizes[i]);
  return {m_.endo_kernels[i].data() + sub_pair_index(i, x, w, a) * X, X};
}

std::span<const double> WcmdpSpec::exo_row(int w) const {
  const auto W = static_cast<std::size_t>(m_.exo_size);
  return {m_.exo_kernel.data() + static_cast<std::size_t>(w) * W, W};
}

bool WcmdpSpec::valid_state(const FullState& s) const {
  if (s.endo.size() != m_.endo_sizes.size()) return false;
  if (s.exo < 0 || s.exo >= m_.exo_size) return false;
  for (std::size_t i = 0; i < s.endo.size(); ++i)
    if (s.endo[i] < 0 || s.endo[i] >= m_.endo_sizes[i]) return false;
  return true;
}

bool WcmdpSpec::valid_action(const FactoredAction& a) const {
  if (a.parts.size() != m_.action_sizes.size()) return false;
  for (std::size_t i = 0; i < a.parts.size(); ++i)
    if (a.parts[i] < 0 || a.parts[i] >= m_.action_sizes[i]) return false;
  return true;
}

// Mixed radix with w as the most significant digit, then x_1 ... x_N.
std::size_t WcmdpSpec::state_index(const FullState& s) const {
  if (!valid_state(s)) throw std::out_of_range("state_index: invalid state");
  std::size_t index = static_cast<std::size_t>(s.exo);
  for (std::size_t i = 0; i < s.endo.size(); ++i) index = index * m_.endo_sizes[i] + s.endo[i];
  return index;
}

FullState WcmdpSpec::index_state(std::size_t index) const {
  if (index >= num_states_) throw std::out_of_range("index_state: index out of range");
  FullState s;
  s.endo.resize(m_.endo_sizes.size());
  for (std::size_t i = m_.endo_sizes.size(); i-- > 0;) {
    s.endo[i] = static_cast<int>(index % m_.endo_sizes[i]);
    index /= m_.endo_sizes[i];
  }
  s.exo = static_cast<int>(index);
  return s;
}

std::size_t WcmdpSpec::action_index(const FactoredAction& a) const {
  if (!valid_action(a)) throw std::out_of_range("action_index: invalid action");
  std::size_t index = 0;
  for (std::size_t i = 0; i < a.parts.size(); ++i) index = index * m_.action_sizes[i] + a.parts[i];
  return index;
}

FactoredAction WcmdpSpec::index_action(std::size_t index) const {
  if (index >= num_actions_) throw std::out_of_range("index_action: index out of range");
  FactoredAction a;
  a.parts.resize(m_.action_sizes.size());
  for (std::size_t i = m_.action_sizes.size(); i-- > 0;) {
    a.parts[i] = static_cast<int>(index % m_.action_sizes[i]);
    index /= m_.action_sizes[i];
  }
  return a;
}

bool WcmdpSpec::is_feasible(const FullState& s, const FactoredAction& a) const {
  const auto L = static_cast<std::size_t>(m_.n_constraints);
  const auto b = rhs(s.exo);
  for (std::size_t l = 0; l < L; ++l) {
    double used = 0.0;
    for (int i = 0; i < num_subproblems(); ++i) used += lhs(i, s.endo[i], s.exo, a.parts[i])[l];
    if (used > b[l]) return false;
  }
  return true;
}

FullState WcmdpSpec::sample_initial_state(Rng& rng) const {
  if (!m_.uniform_initial_state) return m_.initial_state;
  return index_state(rng.uniform_index(num_states_));
}

std::vector<std::size_t> feasible_action_indices(const WcmdpSpec& spec, const FullState& state) {
  const int n = spec.num_subproblems();
  const auto L = static_cast<std::size_t>(spec.num_constraints());
  const auto b = spec.rhs(state.exo);
  std::vector<int> parts(n, 0);
  std::vector<double> used(L);
  std::vector<std::size_t> out;
  for (std::size_t index = 0; index < spec.num_actions(); ++index) {
    std::fill(used.begin(), used.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const auto d = spec.lhs(i, state.endo[i], state.exo, parts[i]);
      for (std::size_t l = 0; l < L; ++l) used[l] += d[l];
    }
    bool ok = true;
    for (std::size_t l = 0; l < L && ok; ++l) ok = used[l] <= b[l];
    if (ok) out.push_back(index);
    // Advance the mixed-radix counter (last part least significant).
    for (int i = n - 1; i >= 0; --i) {
      if (++parts[i] < spec.action_size(i)) break;
      parts[i] = 0;
    }
  }
  return out;
}

std::vector<FactoredAction> feasible_actions(const WcmdpSpec& spec, const FullState& state) {
  std::vector<FactoredAction> out;
  for (std::size_t index : feasible_action_indices(spec, state)) out.push_back(spec.index_action(index));
  return out;
}

Transition sample_step(const WcmdpSpec& spec, const FullState& state, const FactoredAction& action,
                       Rng& rng) {
  if (!spec.valid_state(state) || !spec.valid_action(action)) throw std::invalid_argument("invalid state or action");
  if (!spec.is_feasible(state, action)) throw std::invalid_argument("infeasible action");
  const int n = spec.num_subproblems();
  Transition t;
  t.state = state;
  t.action = action;
  t.rewards.resize(n);
  t.next_state.endo.resize(n);
  for (int i = 0; i < n; ++i) {
    const int x = state.endo[i];
    const int a = action.parts[i];
    t.rewards[i] = spec.reward(i, x, state.exo, a);
    t.next_state.endo[i] = static_cast<int>(rng.categorical(spec.endo_row(i, x, state.exo, a)));
  }
  t.next_state.exo = static_cast<int>(rng.categorical(spec.exo_row(state.exo)));
  const auto b = spec.rhs(state.exo);
  t.rhs.assign(b.begin(), b.end());
  return t;
}

std::vector<SubTransition> split_transition(const WcmdpSpec& spec, const Transition& t) {
  const int n = spec.num_subproblems();
  std::vector<SubTransition> out(n);
  for (int i = 0; i < n; ++i) {
    SubTransition& sub = out[i];
    sub.endo = t.state.endo[i];
    sub.exo = t.state.exo;
    sub.action = t.action.parts[i];
    sub.reward = t.rewards[i];
    const auto d = spec.lhs(i, sub.endo, sub.exo, sub.action);
    sub.lhs.assign(d.begin(), d.end());
    sub.next_endo = t.next_state.endo[i];
    sub.next_exo = t.next_state.exo;
  }
  return out;
}

Transition merge_transitions(const WcmdpSpec& spec, std::span<const SubTransition> parts) {
  if (parts.size() != static_cast<std::size_t>(spec.num_subproblems()))
    throw std::invalid_argument("merge_transitions: wrong number of parts");
  Transition t;
  t.state.exo = parts.front().exo;
  t.next_state.exo = parts.front().next_exo;
  for (const SubTransition& sub : parts) {
    if (sub.exo != t.state.exo || sub.next_exo != t.next_state.exo)
      throw std::invalid_argument("merge_transitions: parts disagree on the exogenous state");
    t.state.endo.push_back(sub.endo);
    t.action.parts.push_back(sub.action);
    t.rewards.push_back(sub.reward);
    t.next_state.endo.push_back(sub.next_endo);
  }
  const auto b = spec.rhs(t.state.exo);
  t.rhs.assign(b.begin(), b.end());
  return t;
}

}  // namespace wcmdp
