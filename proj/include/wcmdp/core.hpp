#pragma once

// Weakly coupled MDP model: N subproblems sharing an exogenous state and
// linked through per-period constraints sum_i d(s_i, a_i) <= b(w).

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "wcmdp/rng.hpp"

namespace wcmdp {

struct FullState {
  std::vector<int> endo;  // x_i per subproblem
  int exo = 0;            // w

  bool operator==(const FullState&) const = default;
};

struct FactoredAction {
  std::vector<int> parts;  // a_i per subproblem

  bool operator==(const FactoredAction&) const = default;
};

/// Experience tuple for the whole problem. `rhs` is b(w) of the originating
/// state; rewards are kept per subproblem and summed where consumed.
struct Transition {
  FullState state;
  FactoredAction action;
  std::vector<double> rewards;
  std::vector<double> rhs;
  FullState next_state;

  double total_reward() const;
  bool operator==(const Transition&) const = default;
};

/// The slice of a Transition seen by subproblem i.
struct SubTransition {
  int endo = 0;
  int exo = 0;
  int action = 0;
  double reward = 0.0;
  std::vector<double> lhs;  // d(s_i, a_i)
  int next_endo = 0;
  int next_exo = 0;

  bool operator==(const SubTransition&) const = default;
};

/// Raw dense tables describing a model. Layouts, with X = |X_i|, A = |A_i|,
/// W = |W| and L the number of linking constraints:
///   endo_kernels[i][((w*X + x)*A + a)*X + x']   p_i(x' | x, w, a)
///   rewards[i][(w*X + x)*A + a]                 r_i(s_i, a_i)
///   constraint_lhs[i][((w*X + x)*A + a)*L + l]  d_l(s_i, a_i)
///   exo_kernel[w*W + w']                        q(w' | w)
///   constraint_rhs[w*L + l]                     b_l(w)
/// The endogenous kernel may depend on w; subproblem i then reads it through
/// its own state s_i = (x_i, w).
struct WcmdpModel {
  std::string name;
  std::vector<int> endo_sizes;
  std::vector<int> action_sizes;
  int exo_size = 1;
  int n_constraints = 1;
  std::vector<std::vector<double>> endo_kernels;
  std::vector<double> exo_kernel;
  std::vector<std::vector<double>> rewards;
  std::vector<std::vector<double>> constraint_lhs;
  std::vector<double> constraint_rhs;
  double discount = 0.9;
  FullState initial_state;
  /// When set, episodes start from a uniformly drawn full state.
  bool uniform_initial_state = false;
};

/// Validated, immutable model. Safe to share across threads.
class WcmdpSpec {
 public:
  /// Throws std::invalid_argument when any invariant fails (kernel rows not
  /// stochastic within 1e-12, discount outside [0,1), table shape mismatch).
  explicit WcmdpSpec(WcmdpModel model);

  const std::string& name() const { return m_.name; }
  int num_subproblems() const { return static_cast<int>(m_.endo_sizes.size()); }
  int num_constraints() const { return m_.n_constraints; }
  int endo_size(int i) const { return m_.endo_sizes[i]; }
  int action_size(int i) const { return m_.action_sizes[i]; }
  int exo_size() const { return m_.exo_size; }
  double discount() const { return m_.discount; }
  const WcmdpModel& model() const { return m_; }

  int max_endo_size() const { return max_endo_; }
  int max_action_size() const { return max_action_; }

  /// |W| * prod |X_i| and prod |A_i|.
  std::size_t num_states() const { return num_states_; }
  std::size_t num_actions() const { return num_actions_; }

  /// Index of (x_i, w) within subproblem i: w * |X_i| + x_i.
  std::size_t sub_state_index(int i, int x, int w) const {
    return static_cast<std::size_t>(w) * m_.endo_sizes[i] + x;
  }
  std::size_t num_sub_states(int i) const {
    return static_cast<std::size_t>(m_.endo_sizes[i]) * m_.exo_size;
  }
  /// Index of ((x_i, w), a_i) within subproblem i.
  std::size_t sub_pair_index(int i, int x, int w, int a) const {
    return sub_state_index(i, x, w) * m_.action_sizes[i] + a;
  }

  double reward(int i, int x, int w, int a) const { return m_.rewards[i][sub_pair_index(i, x, w, a)]; }
  std::span<const double> lhs(int i, int x, int w, int a) const;
  std::span<const double> rhs(int w) const;
  std::span<const double> endo_row(int i, int x, int w, int a) const;
  std::span<const double> exo_row(int w) const;

  std::size_t state_index(const FullState& s) const;
  FullState index_state(std::size_t index) const;
  std::size_t action_index(const FactoredAction& a) const;
  FactoredAction index_action(std::size_t index) const;

  bool valid_state(const FullState& s) const;
  bool valid_action(const FactoredAction& a) const;

  /// Checks sum_i d(s_i, a_i) <= b(w) componentwise.
  bool is_feasible(const FullState& s, const FactoredAction& a) const;

  FullState sample_initial_state(Rng& rng) const;

 private:
  WcmdpModel m_;
  std::size_t num_states_ = 1;
  std::size_t num_actions_ = 1;
  int max_endo_ = 0;
  int max_action_ = 0;
};

/// All actions satisfying the linking constraints at `state`, in
/// lexicographic order of parts. Empty only when the state is infeasible.
std::vector<FactoredAction> feasible_actions(const WcmdpSpec& spec, const FullState& state);

/// Same set as joint action indices (ascending, hence lexicographic).
std::vector<std::size_t> feasible_action_indices(const WcmdpSpec& spec, const FullState& state);

/// Draws the next state: x'_i ~ p_i(. | x_i, w, a_i) for i = 1..N in order,
/// then w' ~ q(. | w). Throws std::invalid_argument("infeasible action").
Transition sample_step(const WcmdpSpec& spec, const FullState& state, const FactoredAction& action,
                       Rng& rng);

/// Splits a transition into per-subproblem experience.
std::vector<SubTransition> split_transition(const WcmdpSpec& spec, const Transition& t);

/// Inverse of split_transition (rhs is recomputed from the spec).
Transition merge_transitions(const WcmdpSpec& spec, std::span<const SubTransition> parts);

}  // namespace wcmdp
