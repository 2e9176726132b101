#pragma once

// Benchmark problem builders and a random-instance generator.

#include <map>
#include <string>
#include <vector>

#include "wcmdp/core.hpp"
#include "wcmdp/rng.hpp"

namespace wcmdp {

/// A built model plus any parameters that were sampled while building it.
/// `sampled` is logged to the run manifest.
struct EnvInstance {
  WcmdpSpec spec;
  std::map<std::string, std::vector<double>> sampled;
};

/// EV charging with deadlines. Each spot holds (B, D): remaining charge and
/// periods until departure. (0, 0) is an empty spot.
struct EvChargingParams {
  int n_spots = 3;
  std::vector<double> cost_levels{0.2, 0.5, 0.8};
  std::vector<double> budget{3.0, 2.0, 1.0};  // b(c) per cost level
  std::vector<double> cost_transition{0.4, 0.3, 0.3,  //
                                      0.2, 0.5, 0.3,  //
                                      0.6, 0.2, 0.2};
  double penalty_coef = 0.2;
  int max_charge = 2;    // B in {0..max_charge}
  int max_deadline = 3;  // D in {0..max_deadline}
  double empty_arrival_prob = 0.3;
  double discount = 0.9;
  bool uniform_initial_state = true;

  int num_charge_states() const { return (max_charge + 1) * (max_deadline + 1); }
  int encode(int charge, int deadline) const { return charge * (max_deadline + 1) + deadline; }
};

/// Per-spot reward: (1-c)a while the car stays, minus F(B-a) = coef*(B-a)^2
/// on the departure period, zero for an empty spot.
double ev_reward(const EvChargingParams& params, double cost, int charge, int deadline, int action);

EnvInstance make_ev_charging(const EvChargingParams& params, Rng& rng);

/// Multi-product inventory with a shared production resource.
struct InventoryParams {
  int n_products = 10;  // uses the first n_products columns below
  int resource_cap = 3;
  std::vector<int> storage{20, 30, 10, 15, 10, 10, 25, 30, 15, 10};
  std::vector<int> max_backorders{5, 5, 5, 5, 5, 5, 5, 5, 5, 5};
  std::vector<double> mean_demand{0.3, 0.7, 0.5, 1.0, 1.4, 0.9, 1.1, 1.2, 0.3, 0.6};
  std::vector<double> holding_cost{0.1, 0.2, 0.05, 0.3, 0.2, 0.5, 0.3, 0.4, 0.15, 0.12};
  std::vector<double> backorder_cost{3.0, 1.2, 5.15, 1.3, 1.1, 1.1, 10.3, 1.05, 1.0, 3.1};
  std::vector<double> lost_sale_cost{30.1, 3.3, 10.05, 3.9, 3.7, 3.6, 40.3, 4.5, 12.55, 44.1};
  double rate_scale = 12.0;
  double rate_offset = 5.971;
  double noise_min = 0.8;
  double noise_max = 1.0;
  int noise_points = 5;
  double dirichlet_lo = 1.0;
  double dirichlet_hi = 5.0;
  double demand_tail = 1e-6;
  double discount = 0.99;
};

/// rho_i(a, p) = scale * p * a / (offset + a).
double production_rate(const InventoryParams& params, int allocation, double noise);

/// Poisson(mean) pmf on {0..k}, k the smallest count with CDF >= 1 - tail;
/// the residual mass is added to k.
std::vector<double> truncated_poisson(double mean, double tail);

EnvInstance make_inventory(const InventoryParams& params, Rng& rng);

/// Online ad matching: every impression goes to exactly one advertiser.
struct AdMatchingParams {
  int n_advertisers = 6;
  int n_impressions = 5;
  std::vector<int> initial_stock{10, 11, 12, 10, 14, 9};
  double reward_lo = 1.0;
  double reward_hi = 4.0;
  double dirichlet_lo = 1.0;
  double dirichlet_hi = 20.0;
  double discount = 0.99;
};

EnvInstance make_ad_matching(const AdMatchingParams& params, Rng& rng);

struct RandomDims {
  int n_subproblems = 2;
  int endo_size = 3;
  int action_size = 2;
  int exo_size = 2;
  int n_constraints = 1;
  double discount = 0.9;
};

/// Dirichlet(1) kernels, Uniform(0,1) rewards, d(s_i, a_i) = a_i on every
/// constraint and b(w) >= 0, so the all-zero action is always feasible.
/// Throws std::invalid_argument when |S| * |A| exceeds 1e5.
WcmdpSpec make_random_wcmdp(const RandomDims& dims, Rng& rng);

}  // namespace wcmdp
