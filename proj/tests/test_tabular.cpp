#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "wcmdp/envs.hpp"
#include "wcmdp/exact.hpp"
#include "wcmdp/tabular.hpp"

using namespace wcmdp;
using wcmdp::testing::blank_model;

namespace {

Transition make_transition(int x, int a, double r, int x_next, double rhs = 0.0) {
  Transition t;
  t.state = FullState{{x}, 0};
  t.action = FactoredAction{{a}};
  t.rewards = {r};
  t.rhs = {rhs};
  t.next_state = FullState{{x_next}, 0};
  return t;
}

EnvInstance ev(int n_spots) {
  EvChargingParams p;
  p.n_spots = n_spots;
  Rng rng(0);
  return make_ev_charging(p, rng);
}

TabularConfig slow_config(double exponent) {
  TabularConfig cfg;
  cfg.alpha.exponent = exponent;
  cfg.beta.exponent = exponent;
  cfg.eta.exponent = exponent;
  return cfg;
}

/// Drives `agent` with uniformly random states and feasible actions.
void train_uniform(TabularAgent& agent, const WcmdpSpec& spec, std::size_t steps, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t k = 0; k < steps; ++k) {
    const FullState s = spec.index_state(rng.uniform_index(spec.num_states()));
    const auto feasible = feasible_action_indices(spec, s);
    const FactoredAction a = spec.index_action(feasible[rng.uniform_index(feasible.size())]);
    agent.observe(sample_step(spec, s, a, rng));
  }
}

}  // namespace

TEST_SUITE("tabular") {
  TEST_CASE("step schedule") {
    StepSchedule s;
    CHECK(s.rate(1) == 1.0);
    CHECK(s.rate(32) == doctest::Approx(std::pow(32.0, -0.4)));
    CHECK_THROWS_AS(s.rate(0), std::invalid_argument);
    s.kind = StepSchedule::Kind::kConstant;
    CHECK(s.rate(0) == 0.1);
  }

  TEST_CASE("Q-learning update example") {
    const WcmdpSpec spec(blank_model({2}, {2}, 1, 1));
    QTable q(2, 2);
    q.at(1, 0) = 2.0;
    q.at(1, 1) = -1.0;
    ql_update(q, spec, make_transition(0, 0, 1.0, 1), 0.5);
    CHECK(q.at(0, 0) == doctest::Approx(1.4).epsilon(1e-15));
  }

  TEST_CASE("Q-learning target respects feasibility at the next state") {
    WcmdpModel m = blank_model({2}, {2}, 1, 1);
    // Action 1 costs 1 in state 1 and the budget is 0.
    m.constraint_lhs[0] = {0.0, 0.0, 0.0, 1.0};
    const WcmdpSpec spec(m);
    QTable q(2, 2);
    q.at(1, 0) = 1.0;
    q.at(1, 1) = 50.0;
    CHECK(ql_target(spec, q, make_transition(0, 0, 0.0, 1)) == doctest::Approx(0.9));
  }

  TEST_CASE("Double Q-learning update evaluates with the other table") {
    const WcmdpSpec spec(blank_model({2}, {2}, 1, 1));
    QTable sel(2, 2), eval(2, 2);
    sel.at(1, 1) = 3.0;
    eval.at(1, 0) = 10.0;
    eval.at(1, 1) = 1.0;
    double_ql_update(sel, eval, spec, make_transition(0, 1, 0.5, 1), 1.0);
    CHECK(sel.at(0, 1) == doctest::Approx(0.5 + 0.9));
  }

  TEST_CASE("Double Q-learning removes maximization bias") {
    const WcmdpSpec spec(blank_model({2}, {5}, 1, 1));
    Rng rng(17);
    const int trials = 4000;
    double single = 0.0, dbl = 0.0;
    for (int k = 0; k < trials; ++k) {
      QTable qa(2, 5), qb(2, 5), q(2, 5);
      for (int a = 0; a < 5; ++a) {
        qa.at(1, a) = rng.normal();
        qb.at(1, a) = rng.normal();
        q.at(1, a) = qa.at(1, a);
      }
      const Transition t = make_transition(0, 0, 0.0, 1);
      ql_update(q, spec, t, 1.0);
      double_ql_update(qa, qb, spec, t, 1.0);
      single += q.at(0, 0);
      dbl += qa.at(0, 0);
    }
    // E[max of 5 standard normals] = 1.1630
    CHECK(single / trials == doctest::Approx(0.9 * 1.1630).epsilon(0.05));
    CHECK(std::abs(dbl / trials) < 0.06);
  }

  TEST_CASE("subagent update example") {
    WcmdpModel m = blank_model({2}, {2}, 1, 1);
    m.constraint_lhs[0] = {0.0, 1.0, 0.0, 1.0};
    m.constraint_rhs = {1.0};
    const WcmdpSpec spec(m);
    const LambdaGrid grid({{0.0}, {0.5}});
    SubagentBank bank(spec, grid);
    const Transition t = make_transition(0, 1, 1.0, 1, 1.0);
    const auto parts = split_transition(spec, t);
    const std::vector<double> betas{1.0};
    subagent_update(bank, spec, grid, 1, parts, betas);
    CHECK(bank.table(1, 0).at(0, 1) == doctest::Approx(0.5));
    CHECK(bank.table(0, 0).at(0, 1) == 0.0);
    subagent_update(bank, spec, grid, 0, parts, betas);
    CHECK(bank.table(0, 0).at(0, 1) == 1.0);
  }

  TEST_CASE("B update converges to the fixed point") {
    BTable b(1, 1);
    const std::vector<double> rhs{1.0};
    StepSchedule eta;
    for (std::uint64_t n = 1; n <= 100000; ++n) b_update(b, 0, rhs, 0, 0.9, eta.rate(n));
    CHECK(std::abs(b.values[0] - 10.0) < 0.1);
  }

  TEST_CASE("B estimate tracks the exact recursion on EV") {
    const auto env = ev(2);
    const auto exact = exact_B(env.spec);
    BTable b(env.spec.exo_size(), 1);
    Rng rng(4);
    int w = 0;
    VisitCounter visits(env.spec.exo_size());
    StepSchedule eta;
    eta.exponent = 0.7;
    for (int k = 0; k < 400000; ++k) {
      const int next = static_cast<int>(rng.categorical(env.spec.exo_row(w)));
      b_update(b, w, env.spec.rhs(w), next, env.spec.discount(), eta.rate(visits.increment(w)));
      w = next;
    }
    for (int x = 0; x < env.spec.exo_size(); ++x) CHECK(std::abs(b.values[x] / exact[x] - 1.0) < 0.01);
  }

  TEST_CASE("Lagrange policy matches enumeration") {
    Rng rng(9);
    const WcmdpSpec spec = make_random_wcmdp(RandomDims{3, 2, 3, 2, 1, 0.9}, rng);
    const LambdaGrid grid({{0.0}, {1.0}});
    SubagentBank bank(spec, grid);
    bank.randomize(rng);
    for (std::size_t s = 0; s < spec.num_states(); ++s) {
      const FullState st = spec.index_state(s);
      for (std::size_t k = 0; k < 2; ++k) {
        double best = -1e300;
        for (const auto& a : feasible_actions(spec, st)) {
          double v = 0.0;
          for (int i = 0; i < 3; ++i) v += bank.table(k, i).at(spec.sub_state_index(i, st.endo[i], st.exo), a.parts[i]);
          best = std::max(best, v);
        }
        const FactoredAction chosen = lagrange_policy_action(bank, spec, k, st);
        CHECK(spec.is_feasible(st, chosen));
        double v = 0.0;
        for (int i = 0; i < 3; ++i) v += bank.table(k, i).at(spec.sub_state_index(i, st.endo[i], st.exo), chosen.parts[i]);
        CHECK(v == best);
      }
    }
  }

  TEST_CASE("epsilon greedy") {
    const std::vector<std::size_t> feasible{0, 2, 5, 7};
    std::vector<double> values(8, 0.0);
    values[5] = 1.0;
    values[6] = 9.0;  // infeasible, never chosen greedily
    Rng rng(1);
    CHECK(epsilon_greedy_index(feasible, values, 0.0, rng) == 5);

    const int n = 40000;
    std::vector<double> counts(4, 0.0);
    for (int k = 0; k < n; ++k) {
      const std::size_t a = epsilon_greedy_index(feasible, values, 1.0, rng);
      counts[std::find(feasible.begin(), feasible.end(), a) - feasible.begin()] += 1.0;
    }
    const std::vector<double> expected(4, n / 4.0);
    CHECK(wcmdp::testing::chi_square_stat(counts, expected) < wcmdp::testing::chi_square_critical_999(3));

    const std::vector<std::size_t> single{3};
    for (int k = 0; k < 20; ++k) CHECK(epsilon_greedy_index(single, values, 1.0, rng) == 3);
    CHECK_THROWS_AS(epsilon_greedy_index(std::vector<std::size_t>{}, values, 0.5, rng), std::runtime_error);
  }

  TEST_CASE("projection result is the minimum of update and bound") {
    const auto env = ev(2);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 0.25, 1);
    TabularConfig cfg;
    cfg.init_low = 0.0;
    cfg.init_high = 40.0;
    Rng init(1), bank(2), rng(3);
    WcqlAgent agent(env.spec, grid, cfg, init, bank);
    FullState s = env.spec.sample_initial_state(rng);
    for (int k = 0; k < 3000; ++k) {
      const FactoredAction a = agent.act(s, rng);
      const Transition t = sample_step(env.spec, s, a, rng);
      agent.observe(t);
      const double q = agent.q().at(env.spec.state_index(t.state), env.spec.action_index(t.action));
      CHECK(q == std::min(agent.last_unprojected(), agent.last_bound()));
      s = t.next_state;
    }
    CHECK(agent.projections() > 0);
    CHECK(agent.violations() == 0);
  }

  TEST_CASE("WCQL with projection disabled is Q-learning") {
    const auto env = ev(2);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 0.25, 1);
    TabularConfig cfg;
    cfg.projection = ProjectionMode::kDisabled;
    Rng init_a(5), init_b(5), bank(6);
    QLearningAgent ql(env.spec, cfg, init_a);
    WcqlAgent wc(env.spec, grid, cfg, init_b, bank);
    Rng rng_a(7), rng_b(7), env_rng(8);
    FullState s = env.spec.sample_initial_state(env_rng);
    for (int k = 0; k < 5000; ++k) {
      const FactoredAction a = ql.act(s, rng_a);
      CHECK(wc.act(s, rng_b) == a);
      const Transition t = sample_step(env.spec, s, a, env_rng);
      ql.observe(t);
      wc.observe(t);
      s = t.next_state;
    }
    CHECK(ql.q() == wc.q());
  }

  TEST_CASE("tabular agents are deterministic given seeds") {
    const auto env = ev(2);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 0.25, 1);
    auto run = [&]() {
      Rng init(11), bank(12), rng(13);
      WcqlAgent agent(env.spec, grid, TabularConfig{}, init, bank);
      FullState s = env.spec.sample_initial_state(rng);
      for (int k = 0; k < 2000; ++k) {
        const Transition t = sample_step(env.spec, s, agent.act(s, rng), rng);
        agent.observe(t);
        s = t.next_state;
      }
      return agent.q();
    };
    CHECK(run() == run());
  }

  TEST_CASE("Q-learning and WCQL converge on single-spot EV") {
    const auto env = ev(1);
    const auto vi = value_iteration(env.spec);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 0.25, 1);
    const TabularConfig cfg = slow_config(0.7);

    Rng init_q(1);
    QLearningAgent ql(env.spec, cfg, init_q);
    train_uniform(ql, env.spec, 3000000, 21);
    Rng init_w(2), bank(3);
    WcqlAgent wc(env.spec, grid, cfg, init_w, bank);
    train_uniform(wc, env.spec, 3000000, 22);

    double err_q = 0.0, err_w = 0.0, min_slack = 1e300;
    for (std::size_t s = 0; s < env.spec.num_states(); ++s) {
      const FullState st = env.spec.index_state(s);
      for (std::size_t a : feasible_action_indices(env.spec, st)) {
        err_q = std::max(err_q, std::abs(ql.q().at(s, a) - vi.q.at(s, a)));
        err_w = std::max(err_w, std::abs(wc.q().at(s, a) - vi.q.at(s, a)));
        min_slack = std::min(min_slack, wc.bound(st, env.spec.index_action(a)) - vi.q.at(s, a));
      }
    }
    CHECK(err_q < 0.05);
    CHECK(err_w < 0.05);
    CHECK(min_slack > -0.05);
  }

  TEST_CASE("full-sweep projection keeps every entry below the bound") {
    const auto env = ev(1);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 1.0, 1);
    TabularConfig cfg;
    cfg.projection = ProjectionMode::kFullSweep;
    cfg.init_high = 30.0;
    Rng init(1), bank(2), rng(3);
    WcqlAgent agent(env.spec, grid, cfg, init, bank);
    FullState s = env.spec.sample_initial_state(rng);
    for (int k = 0; k < 200; ++k) {
      const Transition t = sample_step(env.spec, s, agent.act(s, rng), rng);
      agent.observe(t);
      s = t.next_state;
    }
    for (std::size_t si = 0; si < env.spec.num_states(); ++si)
      for (std::size_t a = 0; a < env.spec.num_actions(); ++a)
        CHECK(agent.q().at(si, a) <= agent.bound(env.spec.index_state(si), env.spec.index_action(a)));
  }
}
