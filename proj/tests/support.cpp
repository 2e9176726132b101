#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wcmdp::testing {

WcmdpModel blank_model(std::vector<int> endo_sizes, std::vector<int> action_sizes, int exo_size, int n_constraints,
                       double discount) {
  WcmdpModel m;
  m.name = "test";
  m.endo_sizes = std::move(endo_sizes);
  m.action_sizes = std::move(action_sizes);
  m.exo_size = exo_size;
  m.n_constraints = n_constraints;
  m.discount = discount;
  for (std::size_t i = 0; i < m.endo_sizes.size(); ++i) {
    const int X = m.endo_sizes[i];
    const int A = m.action_sizes[i];
    const std::size_t pairs = static_cast<std::size_t>(exo_size) * X * A;
    m.endo_kernels.emplace_back(pairs * X, 1.0 / X);
    m.rewards.emplace_back(pairs, 0.0);
    m.constraint_lhs.emplace_back(pairs * n_constraints, 0.0);
  }
  m.exo_kernel.assign(static_cast<std::size_t>(exo_size) * exo_size, 1.0 / exo_size);
  m.constraint_rhs.assign(static_cast<std::size_t>(exo_size) * n_constraints, 0.0);
  m.initial_state.endo.assign(m.endo_sizes.size(), 0);
  return m;
}

std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b, std::size_t n) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t pivot = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r * n + c]) > std::abs(a[pivot * n + c])) pivot = r;
    }
    if (a[pivot * n + c] == 0.0) throw std::runtime_error("singular system");
    if (pivot != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[pivot * n + k]);
      std::swap(b[c], b[pivot]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      if (f == 0.0) continue;
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double acc = b[r];
    for (std::size_t k = r + 1; k < n; ++k) acc -= a[r * n + k] * x[k];
    x[r] = acc / a[r * n + r];
  }
  return x;
}

double joint_transition(const WcmdpSpec& spec, const FullState& s, const FactoredAction& a, const FullState& next) {
  double p = spec.exo_row(s.exo)[next.exo];
  for (int i = 0; i < spec.num_subproblems(); ++i) {
    p *= spec.endo_row(i, s.endo[i], s.exo, a.parts[i])[next.endo[i]];
  }
  return p;
}

namespace {

double joint_reward(const WcmdpSpec& spec, const FullState& s, const FactoredAction& a) {
  double r = 0.0;
  for (int i = 0; i < spec.num_subproblems(); ++i) r += spec.reward(i, s.endo[i], s.exo, a.parts[i]);
  return r;
}

}  // namespace

std::vector<double> brute_force_values(const WcmdpSpec& spec) {
  const std::size_t S = spec.num_states();
  std::vector<std::vector<std::size_t>> options(S);
  for (std::size_t s = 0; s < S; ++s) {
    const FullState st = spec.index_state(s);
    for (std::size_t a = 0; a < spec.num_actions(); ++a) {
      if (spec.is_feasible(st, spec.index_action(a))) options[s].push_back(a);
    }
    if (options[s].empty()) throw std::runtime_error("state without feasible action");
  }
  std::vector<double> best(S, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> choice(S, 0);
  const double g = spec.discount();
  while (true) {
    std::vector<double> m(S * S, 0.0);
    std::vector<double> r(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const FullState st = spec.index_state(s);
      const FactoredAction act = spec.index_action(options[s][choice[s]]);
      r[s] = joint_reward(spec, st, act);
      m[s * S + s] += 1.0;
      for (std::size_t n = 0; n < S; ++n) m[s * S + n] -= g * joint_transition(spec, st, act, spec.index_state(n));
    }
    const auto v = dense_solve(m, r, S);
    for (std::size_t s = 0; s < S; ++s) best[s] = std::max(best[s], v[s]);
    std::size_t k = 0;
    while (k < S && ++choice[k] == options[k].size()) choice[k++] = 0;
    if (k == S) break;
  }
  return best;
}

std::vector<double> naive_relaxed_q(const WcmdpSpec& spec, std::span<const double> lambda, double tol) {
  const std::size_t S = spec.num_states();
  const std::size_t A = spec.num_actions();
  const int L = spec.num_constraints();
  std::vector<double> reward(S * A);
  std::vector<double> trans(S * A * S);
  for (std::size_t s = 0; s < S; ++s) {
    const FullState st = spec.index_state(s);
    for (std::size_t a = 0; a < A; ++a) {
      const FactoredAction act = spec.index_action(a);
      double r = joint_reward(spec, st, act);
      for (int l = 0; l < L; ++l) {
        double slack = spec.rhs(st.exo)[l];
        for (int i = 0; i < spec.num_subproblems(); ++i) slack -= spec.lhs(i, st.endo[i], st.exo, act.parts[i])[l];
        r += lambda[l] * slack;
      }
      reward[s * A + a] = r;
      for (std::size_t n = 0; n < S; ++n) trans[(s * A + a) * S + n] = joint_transition(spec, st, act, spec.index_state(n));
    }
  }
  std::vector<double> q(S * A, 0.0);
  std::vector<double> v(S, 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    for (std::size_t s = 0; s < S; ++s) v[s] = *std::max_element(q.begin() + s * A, q.begin() + (s + 1) * A);
    double diff = 0.0;
    for (std::size_t sa = 0; sa < S * A; ++sa) {
      double ev = 0.0;
      for (std::size_t n = 0; n < S; ++n) ev += trans[sa * S + n] * v[n];
      const double updated = reward[sa] + spec.discount() * ev;
      diff = std::max(diff, std::abs(updated - q[sa]));
      q[sa] = updated;
    }
    if (diff <= tol) return q;
  }
  throw std::runtime_error("naive relaxed iteration did not converge");
}

std::vector<double> naive_subproblem_q(const WcmdpSpec& spec, int i, std::span<const double> lambda, double tol) {
  const int X = spec.endo_size(i);
  const int A = spec.action_size(i);
  const int W = spec.exo_size();
  std::vector<double> q(static_cast<std::size_t>(W) * X * A, 0.0);
  std::vector<double> v(static_cast<std::size_t>(W) * X, 0.0);
  for (int iter = 0; iter < 1000000; ++iter) {
    for (int w = 0; w < W; ++w) {
      for (int x = 0; x < X; ++x) {
        double m = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < A; ++a) m = std::max(m, q[(static_cast<std::size_t>(w) * X + x) * A + a]);
        v[static_cast<std::size_t>(w) * X + x] = m;
      }
    }
    double diff = 0.0;
    for (int w = 0; w < W; ++w) {
      for (int x = 0; x < X; ++x) {
        for (int a = 0; a < A; ++a) {
          double r = spec.reward(i, x, w, a);
          const auto d = spec.lhs(i, x, w, a);
          for (std::size_t l = 0; l < lambda.size(); ++l) r -= lambda[l] * d[l];
          double ev = 0.0;
          const auto row = spec.endo_row(i, x, w, a);
          for (int w2 = 0; w2 < W; ++w2) {
            for (int x2 = 0; x2 < X; ++x2) ev += spec.exo_row(w)[w2] * row[x2] * v[static_cast<std::size_t>(w2) * X + x2];
          }
          double& cell = q[(static_cast<std::size_t>(w) * X + x) * A + a];
          const double updated = r + spec.discount() * ev;
          diff = std::max(diff, std::abs(updated - cell));
          cell = updated;
        }
      }
    }
    if (diff <= tol) return q;
  }
  throw std::runtime_error("naive subproblem iteration did not converge");
}

double chi_square_critical_999(int dof) {
  const double k = dof;
  const double z = 3.090232306167813;
  const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
  return k * t * t * t;
}

double chi_square_stat(std::span<const double> observed, std::span<const double> expected) {
  double stat = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double d = observed[k] - expected[k];
    stat += d * d / expected[k];
  }
  return stat;
}

std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + h;
    const double up = f(x);
    x[k] = orig - h;
    const double down = f(x);
    x[k] = orig;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_gap(std::span<const double> a, std::span<const double> b, double floor) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace wcmdp::testing
