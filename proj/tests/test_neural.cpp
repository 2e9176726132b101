#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "support.hpp"
#include "wcmdp/envs.hpp"
#include "wcmdp/neural.hpp"

using namespace wcmdp;
using wcmdp::testing::blank_model;

namespace {

/// Network whose outputs ignore the input and equal `bias`.
Mlp constant_net(int input, std::vector<double> bias) {
  Mlp net({input, 2, static_cast<int>(bias.size())});
  for (std::size_t k = 0; k < bias.size(); ++k) net.params()[net.bias_offset(1) + k] = bias[k];
  return net;
}

Transition make_transition(int x, int a, double r, int x_next) {
  Transition t;
  t.state = FullState{{x}, 0};
  t.action = FactoredAction{{a}};
  t.rewards = {r};
  t.rhs = {0.0};
  t.next_state = FullState{{x_next}, 0};
  return t;
}

EnvInstance ev(int n_spots) {
  EvChargingParams p;
  p.n_spots = n_spots;
  Rng rng(0);
  return make_ev_charging(p, rng);
}

NeuralConfig short_config() {
  NeuralConfig cfg;
  cfg.hidden = {16, 8};
  cfg.warmup = 200;
  cfg.target_sync = 100;
  cfg.episodes = 20;
  cfg.episode_length = 50;
  cfg.epsilon_decay_steps = 500;
  cfg.adam.lr = 1e-3;
  return cfg;
}

}  // namespace

TEST_SUITE("neural") {
  TEST_CASE("forward and backward on a hand-set network") {
    Mlp net({2, 2, 1});
    auto& p = net.params();
    const double w1[] = {1.0, -1.0, 0.5, 2.0};
    for (int k = 0; k < 4; ++k) p[net.weight_offset(0) + k] = w1[k];
    p[net.bias_offset(0) + 1] = -1.0;
    p[net.weight_offset(1)] = 1.0;
    p[net.weight_offset(1) + 1] = 1.0;
    p[net.bias_offset(1)] = 0.5;

    const std::vector<double> x{1.0, 2.0};
    MlpCache cache;
    mlp_forward(net, x, cache);
    CHECK(cache.output()[0] == doctest::Approx(4.0));

    std::vector<double> grad(p.size(), 0.0);
    const std::vector<double> og{1.0};
    mlp_backward(net, cache, og, grad);
    const std::vector<double> expected{0.0, 0.0, 1.0, 2.0,  // W1
                                       0.0, 1.0,            // b1
                                       0.0, 3.5,            // W2
                                       1.0};                // b2
    for (std::size_t k = 0; k < expected.size(); ++k) CHECK(grad[k] == doctest::Approx(expected[k]));

    // Accumulates rather than overwrites.
    mlp_backward(net, cache, og, grad);
    CHECK(grad[8] == 2.0);
    CHECK_THROWS_AS(mlp_forward(net, std::vector<double>{1.0}), std::invalid_argument);
  }

  TEST_CASE("random initialization bounds") {
    Rng rng(1);
    const Mlp net = Mlp::random({10, 64, 32, 4}, rng);
    CHECK(net.params().size() == 10 * 64 + 64 + 64 * 32 + 32 + 32 * 4 + 4);
    for (std::size_t layer = 0; layer < net.num_layers(); ++layer) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(net.dims()[layer]));
      const std::size_t end = net.bias_offset(layer) + net.dims()[layer + 1];
      for (std::size_t k = net.weight_offset(layer); k < end; ++k) CHECK(std::abs(net.params()[k]) <= bound);
    }
    Rng again(1);
    CHECK(Mlp::random({10, 64, 32, 4}, again) == net);
  }

  TEST_CASE("loss gradient matches finite differences") {
    Rng rng(3);
    Mlp net = Mlp::random({5, 8, 6, 3}, rng);
    std::vector<TdItem> items;
    for (int k = 0; k < 6; ++k) {
      TdItem it;
      for (int j = 0; j < 5; ++j) it.input.push_back(rng.uniform(-1.0, 1.0));
      it.action = rng.uniform_index(3);
      it.target = rng.uniform(-1.0, 1.0);
      it.upper = k % 2 == 0 ? -2.0 : std::numeric_limits<double>::infinity();
      items.push_back(it);
    }
    for (double kappa : {0.0, 10.0}) {
      const LossResult res = td_loss(net, items, kappa, 1.0 / 6);
      auto f = [&](std::span<const double> params) {
        Mlp copy = net;
        std::copy(params.begin(), params.end(), copy.params().begin());
        return td_loss(copy, items, kappa, 1.0 / 6).loss;
      };
      const auto fd = wcmdp::testing::finite_difference(f, net.params(), 1e-6);
      CHECK(wcmdp::testing::relative_gap(res.grad, fd) < 1e-6);
    }
  }

  TEST_CASE("penalty terms") {
    Mlp net = constant_net(1, {2.0});
    TdItem it{{0.0}, 0, 1.0};
    const std::vector<TdItem> items{it};
    CHECK(td_loss(net, items, 10.0, 1.0).loss == doctest::Approx(1.0));

    std::vector<TdItem> capped{it};
    capped[0].upper = 1.5;
    const LossResult with = td_loss(net, capped, 10.0, 1.0);
    CHECK(with.loss == doctest::Approx(1.0 + 10.0 * 0.25));
    const LossResult without = td_loss(net, capped, 0.0, 1.0);
    CHECK(without.loss == doctest::Approx(1.0));
    CHECK(without.grad == td_loss(net, items, 0.0, 1.0).grad);

    capped[0].upper = 2.5;  // inactive
    CHECK(td_loss(net, capped, 10.0, 1.0).grad == td_loss(net, items, 10.0, 1.0).grad);
  }

  TEST_CASE("Adam step") {
    std::vector<double> p{1.0, -1.0, 0.0};
    const std::vector<double> g{0.5, -2.0, 0.0};
    AdamState st(3);
    const AdamConfig cfg;
    adam_step(p, g, st, cfg);
    CHECK(st.t == 1);
    CHECK(p[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(-1.0 + 1e-4).epsilon(1e-9));
    CHECK(p[2] == 0.0);
    // Second step with the same gradient moves by the same amount.
    adam_step(p, g, st, cfg);
    CHECK(p[0] == doctest::Approx(1.0 - 2e-4).epsilon(1e-9));
  }

  TEST_CASE("masking") {
    const std::vector<double> v{3.0, 9.0, 1.0, 3.0};
    const std::vector<std::size_t> allowed{0, 2, 3};
    const auto m = mask_outputs(v, allowed);
    CHECK(m[1] == kMaskedValue);
    CHECK(m[3] == 3.0);
    CHECK(masked_argmax(v, allowed) == 0);
    CHECK_THROWS(masked_argmax(v, std::vector<std::size_t>{}));
  }

  TEST_CASE("replay buffer") {
    ReplayBuffer buf(3);
    for (int k = 0; k < 5; ++k) buf.push(make_transition(0, 0, k, 0));
    CHECK(buf.size() == 3);
    CHECK(buf.capacity() == 3);
    CHECK(buf.at(0).rewards[0] == 2.0);
    CHECK(buf.at(2).rewards[0] == 4.0);

    ReplayBuffer big(8);
    for (int k = 0; k < 8; ++k) big.push(make_transition(0, 0, k, 0));
    Rng rng(5);
    std::vector<double> counts(8, 0.0);
    for (std::size_t i : big.sample_indices(80000, rng)) counts[i] += 1.0;
    const std::vector<double> expected(8, 10000.0);
    CHECK(wcmdp::testing::chi_square_stat(counts, expected) < wcmdp::testing::chi_square_critical_999(7));
  }

  TEST_CASE("encoders") {
    const auto env = ev(2);
    const MainEncoder me(env.spec);
    CHECK(me.input_size() == 12 + 12 + 3);
    CHECK(me.output_size() == 4);
    const auto x = me.encode(FullState{{5, 11}, 2});
    CHECK(x[5] == 1.0);
    CHECK(x[12 + 11] == 1.0);
    CHECK(x[24 + 2] == 1.0);
    CHECK(std::accumulate(x.begin(), x.end(), 0.0) == 3.0);

    const SubagentEncoder se(env.spec);
    CHECK(se.input_size() == 2 + 1 + 12 + 3);
    CHECK(se.output_size() == 2);
    const std::vector<double> lambda{2.5};
    const auto y = se.encode(1, lambda, 4, 0);
    CHECK(y[1] == 1.0);
    CHECK(y[2] == 2.5);
    CHECK(y[3 + 4] == 1.0);
    CHECK(y[15] == 1.0);
    CHECK(se.valid_actions(0) == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("targets") {
    WcmdpModel m = blank_model({2}, {2}, 1, 1);
    m.constraint_lhs[0] = {0.0, 0.0, 0.0, 1.0};  // action 1 infeasible in state 1
    const WcmdpSpec spec(m);
    const MainEncoder enc(spec);
    const Transition t = make_transition(0, 0, 1.0, 1);
    const Mlp target = constant_net(enc.input_size(), {1.0, 50.0});
    CHECK(dqn_target(spec, enc, target, t) == doctest::Approx(1.9));

    const WcmdpSpec open(blank_model({2}, {2}, 1, 1));
    const Mlp online = constant_net(enc.input_size(), {5.0, 2.0});
    const Mlp eval = constant_net(enc.input_size(), {3.0, 7.0});
    CHECK(double_dqn_target(open, enc, online, eval, t) == doctest::Approx(1.0 + 0.9 * 3.0));

    WcmdpModel sm = blank_model({2}, {2}, 1, 1);
    sm.constraint_lhs[0] = {0.0, 1.0, 0.0, 1.0};
    const WcmdpSpec sspec(sm);
    const SubagentEncoder senc(sspec);
    const Mlp sub = constant_net(senc.input_size(), {0.5, 4.0});
    SubTransition part{0, 0, 1, 2.0, {1.0}, 1, 0};
    const std::vector<double> lambda{3.0};
    CHECK(subagent_target(sspec, senc, sub, part, 0, lambda) == doctest::Approx(2.0 - 3.0 + 0.9 * 4.0));
  }

  TEST_CASE("network bound matches a direct evaluation") {
    const auto env = ev(2);
    const SubagentEncoder senc(env.spec);
    Rng rng(2);
    const Mlp net = Mlp::random({senc.input_size(), 8, senc.output_size()}, rng);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 1.0, 1);
    BTable b(3, 1);
    b.values = {20.0, 15.0, 12.0};
    const FullState s{{3, 7}, 1};
    const auto bound = network_bound(env.spec, senc, net, grid, b, s);
    REQUIRE(bound.size() == 4);
    for (std::size_t a = 0; a < 4; ++a) {
      const FactoredAction act = env.spec.index_action(a);
      double best = 1e300;
      for (std::size_t k = 0; k < grid.size(); ++k) {
        double v = grid[k][0] * 15.0;
        for (int i = 0; i < 2; ++i) v += mlp_forward(net, senc.encode(i, grid[k], s.endo[i], s.exo))[act.parts[i]];
        best = std::min(best, v);
      }
      CHECK(bound[a] == doctest::Approx(best).epsilon(1e-12));
    }
    Transition t;
    t.state = s;
    t.action = FactoredAction{{0, 0}};
    t.rewards = {0.25, 0.5};
    t.rhs = {2.0};
    t.next_state = s;
    CHECK(upper_target(env.spec, senc, net, grid, b, t) ==
          doctest::Approx(0.75 + 0.9 * *std::max_element(bound.begin(), bound.end())));
  }

  TEST_CASE("epsilon schedule") {
    const NeuralConfig cfg;
    CHECK(epsilon_at(cfg, 0) == 1.0);
    CHECK(epsilon_at(cfg, 15000) == doctest::Approx(0.525));
    CHECK(epsilon_at(cfg, 30000) == doctest::Approx(0.05));
    CHECK(epsilon_at(cfg, 90000) == doctest::Approx(0.05));
  }

  TEST_CASE("training is deterministic and counts target syncs") {
    const auto env = ev(2);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 1.0, 1);
    const NeuralConfig cfg = short_config();
    const NeuralResult a = train_neural(env.spec, NeuralAlgo::kWcdqn, cfg, grid, NeuralSeeds{});
    const NeuralResult b = train_neural(env.spec, NeuralAlgo::kWcdqn, cfg, grid, NeuralSeeds{});
    CHECK(a.returns == b.returns);
    CHECK(a.main == b.main);
    CHECK(a.subagent == b.subagent);
    CHECK(a.steps == 1000);
    CHECK(a.updates == 800);
    CHECK(a.target_syncs == 8);
    CHECK(a.returns.size() == 20);
  }

  TEST_CASE("WCDQN without the penalty trains the same main network as DQN") {
    const auto env = ev(2);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 1.0, 1);
    NeuralConfig cfg = short_config();
    cfg.kappa = 0.0;
    const NeuralResult dqn = train_neural(env.spec, NeuralAlgo::kDqn, cfg, grid, NeuralSeeds{});
    const NeuralResult wc = train_neural(env.spec, NeuralAlgo::kWcdqn, cfg, grid, NeuralSeeds{});
    CHECK(dqn.main == wc.main);
    CHECK(dqn.returns == wc.returns);
    CHECK(dqn.subagent.params().empty());
  }

  TEST_CASE("B estimate from WCDQN transitions") {
    const auto env = ev(2);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 1.0, 1);
    NeuralConfig cfg = short_config();
    cfg.episodes = 400;
    cfg.warmup = 1000000;  // never optimize, only collect
    cfg.eta.exponent = 0.7;
    const NeuralResult r = train_neural(env.spec, NeuralAlgo::kWcdqn, cfg, grid, NeuralSeeds{});
    const auto exact = exact_B(env.spec);
    for (std::size_t w = 0; w < exact.size(); ++w) CHECK(std::abs(r.b_table.values[w] / exact[w] - 1.0) < 0.05);
    CHECK(r.updates == 0);
  }

  TEST_CASE("oversized joint action spaces are refused") {
    Rng rng(1);
    const auto inv = make_inventory(InventoryParams{}, rng);
    const LambdaGrid grid = LambdaGrid::scalar_range(0.0, 10.0, 1.0, 1);
    CHECK_THROWS_AS(train_neural(inv.spec, NeuralAlgo::kDqn, short_config(), grid, NeuralSeeds{}),
                    std::invalid_argument);
  }

  TEST_CASE("checkpoint round trip") {
    Checkpoint ck;
    ck.env_id = "ev_charging";
    ck.dims = {27, 64, 32, 4};
    ck.seed = 0xdeadbeefcafeULL;
    ck.arrays["main"] = {1.5, -0.0, 1e-300, std::numeric_limits<double>::max()};
    ck.arrays["b_table"] = {};
    std::stringstream ss;
    write_checkpoint(ss, ck);
    const std::string bytes = ss.str();
    CHECK(bytes.substr(0, 8) == std::string("WCMDPCK\0", 8));
    std::istringstream in(bytes);
    CHECK(read_checkpoint(in) == ck);

    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(truncated), std::runtime_error);
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream wrong(bad);
    CHECK_THROWS_AS(read_checkpoint(wrong), std::runtime_error);
  }
}
