#include <doctest.h>

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "wcmdp/envs.hpp"

using namespace wcmdp;

namespace {

double row_sum(std::span<const double> row) { return std::accumulate(row.begin(), row.end(), 0.0); }

/// Three-branch per-spot reward written out directly.
double reference_ev_reward(double c, int B, int D, int a) {
  if (B > 0 && D > 1) return (1.0 - c) * a;
  if (B > 0 && D == 1) return (1.0 - c) * a - 0.2 * (B - a) * (B - a);
  return 0.0;
}

void check_nonempty_feasible(const WcmdpSpec& spec, Rng& rng, std::size_t samples) {
  for (std::size_t k = 0; k < samples; ++k) {
    FullState s;
    s.exo = static_cast<int>(rng.uniform_index(spec.exo_size()));
    for (int i = 0; i < spec.num_subproblems(); ++i) s.endo.push_back(static_cast<int>(rng.uniform_index(spec.endo_size(i))));
    CHECK_FALSE(feasible_action_indices(spec, s).empty());
  }
}

}  // namespace

TEST_SUITE("envs") {
  TEST_CASE("EV reward examples") {
    const EvChargingParams p;
    CHECK(ev_reward(p, 0.2, 2, 1, 0) == doctest::Approx(-0.8).epsilon(1e-15));
    for (int a = 0; a < 2; ++a)
      for (int d = 0; d <= p.max_deadline; ++d) CHECK(ev_reward(p, 0.5, 0, d, a) == 0.0);
  }

  TEST_CASE("EV reward table matches the three-branch definition everywhere") {
    const EvChargingParams p;
    Rng rng(0);
    const auto env = make_ev_charging(p, rng);
    const WcmdpSpec& spec = env.spec;
    CHECK(spec.num_sub_states(0) == 36);
    for (int w = 0; w < 3; ++w)
      for (int B = 0; B <= p.max_charge; ++B)
        for (int D = 0; D <= p.max_deadline; ++D)
          for (int a = 0; a < 2; ++a)
            for (int i = 0; i < 3; ++i)
              CHECK(spec.reward(i, p.encode(B, D), w, a) ==
                    doctest::Approx(reference_ev_reward(p.cost_levels[w], B, D, a)).epsilon(1e-15));
  }

  TEST_CASE("EV dynamics") {
    const EvChargingParams p;
    Rng rng(0);
    const auto env = make_ev_charging(p, rng);
    const auto row = env.spec.endo_row(0, p.encode(2, 3), 1, 1);
    CHECK(row[p.encode(1, 2)] == 1.0);
    CHECK(row_sum(row) == doctest::Approx(1.0));

    const auto arrival = env.spec.endo_row(0, p.encode(1, 1), 0, 0);
    CHECK(arrival[p.encode(0, 0)] == doctest::Approx(0.3));
    CHECK(arrival[p.encode(2, 3)] == doctest::Approx(0.7 / 11));
    for (int w = 0; w < 3; ++w) {
      CHECK(env.spec.rhs(w)[0] == p.budget[w]);
      CHECK(row_sum(env.spec.exo_row(w)) == doctest::Approx(1.0));
    }
    CHECK(env.spec.discount() == 0.9);
  }

  TEST_CASE("EV feasible set is nonempty at every state") {
    Rng rng(0);
    const auto env = make_ev_charging(EvChargingParams{}, rng);
    for (std::size_t s = 0; s < env.spec.num_states(); s += 7) {
      CHECK_FALSE(feasible_action_indices(env.spec, env.spec.index_state(s)).empty());
    }
  }

  TEST_CASE("inventory production rate") {
    const InventoryParams p;
    CHECK(production_rate(p, 3, 1.0) == doctest::Approx(36.0 / 8.971).epsilon(1e-12));
    CHECK(production_rate(p, 3, 1.0) == doctest::Approx(4.0129).epsilon(1e-4));
    CHECK(production_rate(p, 0, 0.87) == 0.0);
  }

  TEST_CASE("truncated Poisson") {
    const auto pmf = truncated_poisson(1.4, 1e-6);
    CHECK(std::accumulate(pmf.begin(), pmf.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-14));
    double cdf = 0.0;
    for (std::size_t k = 0; k + 1 < pmf.size(); ++k) {
      cdf += pmf[k];
      CHECK(cdf < 1.0 - 1e-6);
    }
    CHECK(pmf[0] == doctest::Approx(std::exp(-1.4)));
  }

  TEST_CASE("inventory model") {
    InventoryParams p;
    p.n_products = 3;
    Rng rng(4);
    const auto env = make_inventory(p, rng);
    const WcmdpSpec& spec = env.spec;
    CHECK(spec.num_subproblems() == 3);
    CHECK(spec.endo_size(0) == p.storage[0] + p.max_backorders[0] + 1);
    CHECK(spec.action_size(0) == p.resource_cap + 1);
    CHECK(spec.exo_size() == 5);
    CHECK(spec.discount() == 0.99);
    CHECK(env.sampled.at("noise_dirichlet_alpha").size() == 5);
    for (double a : env.sampled.at("noise_dirichlet_alpha")) CHECK((a >= 1.0 && a <= 5.0));

    // Full storage with production: next stock stays within [-M, R], and the
    // zero-demand outcome lands on R.
    const int R = p.storage[0];
    const int M = p.max_backorders[0];
    const auto pmf = truncated_poisson(p.mean_demand[0], p.demand_tail);
    const auto row = spec.endo_row(0, R + M, 4, 2);
    CHECK(row_sum(row) == doctest::Approx(1.0));
    CHECK(row[R + M] >= pmf[0] - 1e-15);
    // All costs nonnegative, so rewards are nonpositive.
    for (int w = 0; w < 5; ++w)
      for (int x = 0; x < spec.endo_size(1); ++x)
        for (int a = 0; a < spec.action_size(1); ++a) CHECK(spec.reward(1, x, w, a) <= 0.0);
    CHECK(spec.sample_initial_state(rng).endo == std::vector<int>{5, 5, 5});
  }

  TEST_CASE("inventory mean next stock is preserved") {
    InventoryParams p;
    p.n_products = 1;
    Rng rng(1);
    const auto env = make_inventory(p, rng);
    const int M = p.max_backorders[0];
    const auto pmf = truncated_poisson(p.mean_demand[0], p.demand_tail);
    const int x = 10 + M;  // stock 10, far from both clamps
    const auto row = env.spec.endo_row(0, x, 2, 2);
    double mean = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) mean += row[k] * (static_cast<double>(k) - M);
    double expected = 0.0;
    const double level = 10 + production_rate(p, 2, 0.9);
    for (std::size_t d = 0; d < pmf.size(); ++d) expected += pmf[d] * std::max(level - static_cast<double>(d), -static_cast<double>(M));
    CHECK(mean == doctest::Approx(expected).epsilon(1e-12));
  }

  TEST_CASE("ad matching") {
    const AdMatchingParams p;
    Rng rng(2);
    const auto env = make_ad_matching(p, rng);
    const WcmdpSpec& spec = env.spec;
    CHECK(spec.sample_initial_state(rng).endo == std::vector<int>{10, 11, 12, 10, 14, 9});
    const FullState s0 = spec.sample_initial_state(rng);
    const auto acts = feasible_actions(spec, s0);
    CHECK(acts.size() == 6);
    for (const auto& a : acts) CHECK(std::accumulate(a.parts.begin(), a.parts.end(), 0) == 1);
    for (int w = 0; w < 5; ++w) CHECK(spec.reward(0, 0, w, 1) == 0.0);
    CHECK(spec.endo_row(0, 0, 0, 1)[0] == 1.0);
    for (double l : env.sampled.at("reward_coefficients")) CHECK((l >= 1.0 && l <= 4.0));
    CHECK(spec.discount() == 0.99);
    check_nonempty_feasible(spec, rng, 500);
  }

  TEST_CASE("random instances") {
    Rng rng(8);
    const WcmdpSpec spec = make_random_wcmdp(RandomDims{2, 3, 2, 2, 1, 0.9}, rng);
    CHECK(spec.num_states() == 18);
    CHECK(spec.num_actions() == 4);
    for (int i = 0; i < 2; ++i)
      for (int w = 0; w < 2; ++w)
        for (int x = 0; x < 3; ++x)
          for (int a = 0; a < 2; ++a) CHECK(std::abs(row_sum(spec.endo_row(i, x, w, a)) - 1.0) <= 1e-12);
    for (std::size_t s = 0; s < spec.num_states(); ++s) {
      CHECK(spec.is_feasible(spec.index_state(s), FactoredAction{{0, 0}}));
    }
    CHECK_THROWS_AS(make_random_wcmdp(RandomDims{4, 10, 4, 2, 1, 0.9}, rng), std::invalid_argument);
  }

  TEST_CASE("full-size benchmarks have feasible actions") {
    Rng rng(3);
    const auto inv = make_inventory(InventoryParams{}, rng);
    check_nonempty_feasible(inv.spec, rng, 20);
  }
}
