#include "wcmdp/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wcmdp {

namespace {

std::vector<double> sample_chain(int size, double lo, double hi, Rng& rng, std::vector<double>* alpha_out) {
  std::vector<double> alpha(size);
  for (double& a : alpha) a = rng.uniform(lo, hi);
  std::vector<double> matrix;
  matrix.reserve(static_cast<std::size_t>(size) * size);
  for (int row = 0; row < size; ++row) {
    const auto draw = rng.dirichlet(alpha);
    // Renormalize in a fixed order so rows sum to 1 within the model tolerance.
    double total = 0.0;
    for (double p : draw) total += p;
    for (double p : draw) matrix.push_back(p / total);
  }
  if (alpha_out) *alpha_out = std::move(alpha);
  return matrix;
}

}  // namespace

double ev_reward(const EvChargingParams& params, double cost, int charge, int deadline, int action) {
  if (charge <= 0 || deadline <= 0) return 0.0;
  const double revenue = (1.0 - cost) * action;
  if (deadline > 1) return revenue;
  const double unmet = static_cast<double>(charge - action);
  return revenue - params.penalty_coef * unmet * unmet;
}

EnvInstance make_ev_charging(const EvChargingParams& params, Rng& /*rng*/) {
  const int W = static_cast<int>(params.cost_levels.size());
  if (params.n_spots < 1) throw std::invalid_argument("ev: need at least one spot");
  if (static_cast<int>(params.budget.size()) != W) throw std::invalid_argument("ev: budget must cover every cost level");
  if (static_cast<int>(params.cost_transition.size()) != W * W) throw std::invalid_argument("ev: cost transition shape");
  if (params.max_charge < 1 || params.max_deadline < 1) throw std::invalid_argument("ev: charge/deadline ranges");

  const int X = params.num_charge_states();
  const int A = 2;
  // Arrival distribution: empty spot with empty_arrival_prob, the remaining
  // mass split evenly over every other (B, D) combination.
  std::vector<double> arrival(X, (1.0 - params.empty_arrival_prob) / (X - 1));
  arrival[params.encode(0, 0)] = params.empty_arrival_prob;

  WcmdpModel m;
  m.name = "ev_charging";
  m.exo_size = W;
  m.n_constraints = 1;
  m.discount = params.discount;
  m.exo_kernel = params.cost_transition;
  m.constraint_rhs = params.budget;
  m.uniform_initial_state = params.uniform_initial_state;
  m.initial_state.endo.assign(params.n_spots, params.encode(0, 0));
  m.initial_state.exo = 0;

  std::vector<double> kernel(static_cast<std::size_t>(X) * W * A * X, 0.0);
  std::vector<double> reward(static_cast<std::size_t>(X) * W * A, 0.0);
  std::vector<double> lhs(static_cast<std::size_t>(X) * W * A, 0.0);
  for (int w = 0; w < W; ++w) {
    for (int charge = 0; charge <= params.max_charge; ++charge) {
      for (int deadline = 0; deadline <= params.max_deadline; ++deadline) {
        const int x = params.encode(charge, deadline);
        for (int a = 0; a < A; ++a) {
          const std::size_t pair = (static_cast<std::size_t>(w) * X + x) * A + a;
          reward[pair] = ev_reward(params, params.cost_levels[w], charge, deadline, a);
          lhs[pair] = a;
          double* row = kernel.data() + pair * X;
          if (deadline > 1) {
            row[params.encode(std::max(charge - a, 0), deadline - 1)] = 1.0;
          } else {
            std::copy(arrival.begin(), arrival.end(), row);
          }
        }
      }
    }
  }
  m.endo_sizes.assign(params.n_spots, X);
  m.action_sizes.assign(params.n_spots, A);
  m.endo_kernels.assign(params.n_spots, kernel);
  m.rewards.assign(params.n_spots, reward);
  m.constraint_lhs.assign(params.n_spots, lhs);
  return EnvInstance{WcmdpSpec(std::move(m)), {}};
}

double production_rate(const InventoryParams& params, int allocation, double noise) {
  return params.rate_scale * noise * allocation / (params.rate_offset + allocation);
}

std::vector<double> truncated_poisson(double mean, double tail) {
  if (!(mean >= 0.0)) throw std::invalid_argument("poisson: negative mean");
  std::vector<double> pmf;
  double p = std::exp(-mean);
  double cdf = 0.0;
  for (int k = 0;; ++k) {
    if (k > 0) p *= mean / k;
    pmf.push_back(p);
    cdf += p;
    if (cdf >= 1.0 - tail) break;
  }
  pmf.back() += 1.0 - cdf;
  return pmf;
}

EnvInstance make_inventory(const InventoryParams& params, Rng& rng) {
  const int n = params.n_products;
  auto too_short = [n](std::size_t size) { return static_cast<int>(size) < n; };
  if (n < 1) throw std::invalid_argument("inventory: need at least one product");
  if (too_short(params.storage.size()) || too_short(params.max_backorders.size()) ||
      too_short(params.mean_demand.size()) || too_short(params.holding_cost.size()) ||
      too_short(params.backorder_cost.size()) || too_short(params.lost_sale_cost.size()))
    throw std::invalid_argument("inventory: product tables shorter than n_products");
  if (params.resource_cap < 0 || params.noise_points < 1) throw std::invalid_argument("inventory: bad resource or noise grid");

  const int W = params.noise_points;
  const int A = params.resource_cap + 1;
  std::vector<double> noise(W);
  for (int w = 0; w < W; ++w)
    noise[w] = W == 1 ? params.noise_max
                      : params.noise_min + (params.noise_max - params.noise_min) * w / (W - 1);

  WcmdpModel m;
  m.name = "inventory";
  m.exo_size = W;
  m.n_constraints = 1;
  m.discount = params.discount;
  m.constraint_rhs.assign(W, static_cast<double>(params.resource_cap));
  std::vector<double> alpha;
  m.exo_kernel = sample_chain(W, params.dirichlet_lo, params.dirichlet_hi, rng, &alpha);
  m.initial_state.exo = 0;
  for (int i = 0; i < n; ++i) {
    const int R = params.storage[i];
    const int M = params.max_backorders[i];
    if (R <= 0 || M <= 0) throw std::invalid_argument("inventory: R_i and M_i must be positive");
    const int X = R + M + 1;  // stock levels -M..R, index = stock + M
    const auto demand = truncated_poisson(params.mean_demand[i], params.demand_tail);
    std::vector<double> kernel(static_cast<std::size_t>(X) * W * A * X, 0.0);
    std::vector<double> reward(static_cast<std::size_t>(X) * W * A, 0.0);
    std::vector<double> lhs(static_cast<std::size_t>(X) * W * A, 0.0);
    for (int w = 0; w < W; ++w) {
      for (int x = 0; x < X; ++x) {
        const int stock = x - M;
        for (int a = 0; a < A; ++a) {
          const std::size_t pair = (static_cast<std::size_t>(w) * X + x) * A + a;
          const double level = stock + production_rate(params, a, noise[w]);
          // Expected holding, backorder and lost-sale cost over the demand.
          double cost = params.holding_cost[i] * std::max(level, 0.0) +
                        params.backorder_cost[i] * std::max(-level, 0.0);
          double* row = kernel.data() + pair * X;
          for (std::size_t d = 0; d < demand.size(); ++d) {
            const double shortfall = std::max(static_cast<double>(d) - level, 0.0);
            cost += demand[d] * params.lost_sale_cost[i] * std::max(shortfall - M, 0.0);
            // Fractional stock is split between the neighbouring integer
            // levels, preserving its mean.
            const double next = std::clamp(level - static_cast<double>(d), -static_cast<double>(M),
                                           static_cast<double>(R));
            const double lo = std::floor(next);
            const double frac = next - lo;
            const int lo_index = static_cast<int>(lo) + M;
            row[lo_index] += demand[d] * (1.0 - frac);
            if (frac > 0.0) row[lo_index + 1] += demand[d] * frac;
          }
          reward[pair] = -cost;
          lhs[pair] = a;
        }
      }
    }
    m.endo_sizes.push_back(X);
    m.action_sizes.push_back(A);
    m.endo_kernels.push_back(std::move(kernel));
    m.rewards.push_back(std::move(reward));
    m.constraint_lhs.push_back(std::move(lhs));
    m.initial_state.endo.push_back(M);  // zero stock
  }
  EnvInstance out{WcmdpSpec(std::move(m)), {}};
  out.sampled["noise_dirichlet_alpha"] = alpha;
  out.sampled["noise_transition"] = out.spec.model().exo_kernel;
  return out;
}

EnvInstance make_ad_matching(const AdMatchingParams& params, Rng& rng) {
  const int n = params.n_advertisers;
  const int W = params.n_impressions;
  if (n < 1 || W < 1) throw std::invalid_argument("ad matching: empty advertiser or impression set");
  if (static_cast<int>(params.initial_stock.size()) != n) throw std::invalid_argument("ad matching: initial stock size");

  std::vector<double> alpha;
  std::vector<double> chain = sample_chain(W, params.dirichlet_lo, params.dirichlet_hi, rng, &alpha);
  std::vector<double> value(static_cast<std::size_t>(n) * W);
  for (double& v : value) v = rng.uniform(params.reward_lo, params.reward_hi);

  WcmdpModel m;
  m.name = "ad_matching";
  m.exo_size = W;
  // Exactly-one assignment as the pair sum a <= 1 and -sum a <= -1.
  m.n_constraints = 2;
  m.discount = params.discount;
  m.exo_kernel = chain;
  for (int w = 0; w < W; ++w) {
    m.constraint_rhs.push_back(1.0);
    m.constraint_rhs.push_back(-1.0);
  }
  m.initial_state.exo = 0;
  for (int i = 0; i < n; ++i) {
    if (params.initial_stock[i] < 0) throw std::invalid_argument("ad matching: negative stock");
    const int X = params.initial_stock[i] + 1;
    const int A = 2;
    std::vector<double> kernel(static_cast<std::size_t>(X) * W * A * X, 0.0);
    std::vector<double> reward(static_cast<std::size_t>(X) * W * A, 0.0);
    std::vector<double> lhs(static_cast<std::size_t>(X) * W * A * 2, 0.0);
    for (int w = 0; w < W; ++w) {
      for (int x = 0; x < X; ++x) {
        for (int a = 0; a < A; ++a) {
          const std::size_t pair = (static_cast<std::size_t>(w) * X + x) * A + a;
          reward[pair] = value[static_cast<std::size_t>(i) * W + w] * std::min(x, a);
          kernel[pair * X + std::max(x - a, 0)] = 1.0;
          lhs[pair * 2] = a;
          lhs[pair * 2 + 1] = -a;
        }
      }
    }
    m.endo_sizes.push_back(X);
    m.action_sizes.push_back(A);
    m.endo_kernels.push_back(std::move(kernel));
    m.rewards.push_back(std::move(reward));
    m.constraint_lhs.push_back(std::move(lhs));
    m.initial_state.endo.push_back(params.initial_stock[i]);
  }
  EnvInstance out{WcmdpSpec(std::move(m)), {}};
  out.sampled["impression_dirichlet_alpha"] = alpha;
  out.sampled["impression_transition"] = chain;
  out.sampled["reward_coefficients"] = value;
  return out;
}

WcmdpSpec make_random_wcmdp(const RandomDims& dims, Rng& rng) {
  const int n = dims.n_subproblems;
  const int X = dims.endo_size;
  const int A = dims.action_size;
  const int W = dims.exo_size;
  const int L = dims.n_constraints;
  if (n < 1 || X < 1 || A < 1 || W < 1 || L < 1) throw std::invalid_argument("random wcmdp: empty dimension");
  const double pairs = static_cast<double>(W) * std::pow(static_cast<double>(X) * A, n);
  if (pairs > 1e5) throw std::invalid_argument("random wcmdp: |S|*|A| exceeds 1e5");

  auto dirichlet_row = [&rng](int size) {
    std::vector<double> ones(size, 1.0);
    auto row = rng.dirichlet(ones);
    double total = 0.0;
    for (double p : row) total += p;
    for (double& p : row) p /= total;
    return row;
  };

  WcmdpModel m;
  m.name = "random";
  m.exo_size = W;
  m.n_constraints = L;
  m.discount = dims.discount;
  for (int w = 0; w < W; ++w) {
    const auto row = dirichlet_row(W);
    m.exo_kernel.insert(m.exo_kernel.end(), row.begin(), row.end());
  }
  for (int i = 0; i < n; ++i) {
    std::vector<double> kernel;
    std::vector<double> reward;
    std::vector<double> lhs;
    for (int w = 0; w < W; ++w) {
      for (int x = 0; x < X; ++x) {
        for (int a = 0; a < A; ++a) {
          const auto row = dirichlet_row(X);
          kernel.insert(kernel.end(), row.begin(), row.end());
          reward.push_back(rng.uniform());
          for (int l = 0; l < L; ++l) lhs.push_back(a);
        }
      }
    }
    m.endo_sizes.push_back(X);
    m.action_sizes.push_back(A);
    m.endo_kernels.push_back(std::move(kernel));
    m.rewards.push_back(std::move(reward));
    m.constraint_lhs.push_back(std::move(lhs));
  }
  // Budgets between 0 and three quarters of the largest possible usage, so
  // the constraint binds at some states and never excludes the zero action.
  const double max_usage = static_cast<double>(n) * (A - 1);
  for (int w = 0; w < W; ++w)
    for (int l = 0; l < L; ++l) m.constraint_rhs.push_back(std::floor(rng.uniform(0.0, 0.75 * max_usage + 1.0)));
  return WcmdpSpec(std::move(m));
}

}  // namespace wcmdp
