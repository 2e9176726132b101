#include "wcmdp/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace wcmdp {

// ---------------------------------------------------------------------------
// Replay

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index");
  return items_[(head_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count, Rng& rng) const {
  if (items_.empty()) throw std::runtime_error("sampling from an empty replay buffer");
  std::vector<std::size_t> out(count);
  for (auto& k : out) k = rng.uniform_index(items_.size());
  return out;
}

// ---------------------------------------------------------------------------
// Encoders

MainEncoder::MainEncoder(const WcmdpSpec& spec) : spec_(&spec), input_size_(spec.exo_size()) {
  for (int i = 0; i < spec.num_subproblems(); ++i) input_size_ += spec.endo_size(i);
  output_size_ = static_cast<int>(spec.num_actions());
}

std::vector<double> MainEncoder::encode(const FullState& s) const {
  std::vector<double> x(input_size_, 0.0);
  std::size_t offset = 0;
  for (int i = 0; i < spec_->num_subproblems(); ++i) {
    x[offset + s.endo[i]] = 1.0;
    offset += spec_->endo_size(i);
  }
  x[offset + s.exo] = 1.0;
  return x;
}

SubagentEncoder::SubagentEncoder(const WcmdpSpec& spec)
    : spec_(&spec),
      input_size_(spec.num_subproblems() + spec.num_constraints() + spec.max_endo_size() + spec.exo_size()),
      output_size_(spec.max_action_size()) {}

std::vector<double> SubagentEncoder::encode(int i, std::span<const double> lambda, int x, int w) const {
  const int n = spec_->num_subproblems();
  const int L = spec_->num_constraints();
  std::vector<double> v(input_size_, 0.0);
  v[i] = 1.0;
  for (int l = 0; l < L; ++l) v[n + l] = lambda[l];
  v[n + L + x] = 1.0;
  v[n + L + spec_->max_endo_size() + w] = 1.0;
  return v;
}

std::vector<std::size_t> SubagentEncoder::valid_actions(int i) const {
  std::vector<std::size_t> out(spec_->action_size(i));
  for (std::size_t a = 0; a < out.size(); ++a) out[a] = a;
  return out;
}

// ---------------------------------------------------------------------------
// Losses and targets

LossResult td_loss(const Mlp& net, std::span<const TdItem> items, double kappa, double scale) {
  LossResult res;
  res.grad.assign(net.params().size(), 0.0);
  MlpCache cache;
  std::vector<double> out_grad(net.output_size(), 0.0);
  for (const TdItem& item : items) {
    mlp_forward(net, item.input, cache);
    const double q = cache.output()[item.action];
    const double err = item.target - q;
    double loss = err * err;
    double dq = -2.0 * err;
    if (kappa != 0.0 && q > item.upper) {
      const double excess = q - item.upper;
      loss += kappa * excess * excess;
      dq += 2.0 * kappa * excess;
    }
    res.loss += scale * loss;
    out_grad[item.action] = scale * dq;
    mlp_backward(net, cache, out_grad, res.grad);
    out_grad[item.action] = 0.0;
  }
  return res;
}

double dqn_target(const WcmdpSpec& spec, const MainEncoder& enc, const Mlp& target_net, const Transition& t) {
  const auto q = mlp_forward(target_net, enc.encode(t.next_state));
  const auto feasible = feasible_action_indices(spec, t.next_state);
  return t.total_reward() + spec.discount() * q[masked_argmax(q, feasible)];
}

double double_dqn_target(const WcmdpSpec& spec, const MainEncoder& enc, const Mlp& online, const Mlp& target_net,
                         const Transition& t) {
  const auto input = enc.encode(t.next_state);
  const auto q_online = mlp_forward(online, input);
  const auto q_target = mlp_forward(target_net, input);
  const auto feasible = feasible_action_indices(spec, t.next_state);
  return t.total_reward() + spec.discount() * q_target[masked_argmax(q_online, feasible)];
}

double subagent_target(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& target_net,
                       const SubTransition& part, int i, std::span<const double> lambda) {
  double penalty = 0.0;
  for (std::size_t l = 0; l < lambda.size(); ++l) penalty += lambda[l] * part.lhs[l];
  const auto q = mlp_forward(target_net, enc.encode(i, lambda, part.next_endo, part.next_exo));
  const auto valid = enc.valid_actions(i);
  return part.reward - penalty + spec.discount() * q[masked_argmax(q, valid)];
}

std::vector<std::vector<std::vector<double>>> subagent_outputs(const WcmdpSpec& spec, const SubagentEncoder& enc,
                                                               const Mlp& net, const LambdaGrid& grid,
                                                               const FullState& s) {
  const int n = spec.num_subproblems();
  std::vector<std::vector<std::vector<double>>> out(grid.size(), std::vector<std::vector<double>>(n));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (int i = 0; i < n; ++i) {
      auto q = mlp_forward(net, enc.encode(i, grid[k], s.endo[i], s.exo));
      q.resize(spec.action_size(i));
      out[k][i] = std::move(q);
    }
  }
  return out;
}

std::vector<double> network_bound(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& net,
                                  const LambdaGrid& grid, const BTable& b_table, const FullState& s) {
  const auto outputs = subagent_outputs(spec, enc, net, grid, s);
  const auto b = b_table.at(s.exo);
  const int n = spec.num_subproblems();
  std::vector<double> bound(spec.num_actions(), std::numeric_limits<double>::infinity());
  std::vector<double> offset(grid.size(), 0.0);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    for (int l = 0; l < grid.dimension(); ++l) offset[k] += grid[k][l] * b[l];
  }
  for (std::size_t a = 0; a < spec.num_actions(); ++a) {
    const FactoredAction act = spec.index_action(a);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      double value = offset[k];
      for (int i = 0; i < n; ++i) value += outputs[k][i][act.parts[i]];
      bound[a] = std::min(bound[a], value);
    }
  }
  return bound;
}

double upper_target(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& target_net,
                    const LambdaGrid& grid, const BTable& b_table, const Transition& t) {
  const auto bound = network_bound(spec, enc, target_net, grid, b_table, t.next_state);
  return t.total_reward() + spec.discount() * *std::max_element(bound.begin(), bound.end());
}

std::vector<TdItem> main_items(const WcmdpSpec& spec, const MainEncoder& enc,
                               std::span<const Transition* const> batch, std::span<const double> targets,
                               std::span<const double> uppers) {
  std::vector<TdItem> items(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    items[k].input = enc.encode(batch[k]->state);
    items[k].action = spec.action_index(batch[k]->action);
    items[k].target = targets[k];
    if (!uppers.empty()) items[k].upper = uppers[k];
  }
  return items;
}

std::vector<TdItem> subagent_items(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& target_net,
                                   const LambdaGrid& grid, std::span<const Transition* const> batch,
                                   std::span<const std::size_t> lambda_index) {
  std::vector<TdItem> items;
  items.reserve(batch.size() * spec.num_subproblems());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto lambda = grid[lambda_index[k]];
    const auto parts = split_transition(spec, *batch[k]);
    for (int i = 0; i < spec.num_subproblems(); ++i) {
      TdItem item;
      item.input = enc.encode(i, lambda, parts[i].endo, parts[i].exo);
      item.action = static_cast<std::size_t>(parts[i].action);
      item.target = subagent_target(spec, enc, target_net, parts[i], i, lambda);
      items.push_back(std::move(item));
    }
  }
  return items;
}

// ---------------------------------------------------------------------------
// Training

double epsilon_at(const NeuralConfig& cfg, std::uint64_t step) {
  if (cfg.epsilon_decay_steps == 0 || step >= cfg.epsilon_decay_steps) return cfg.epsilon_end;
  const double frac = static_cast<double>(step) / static_cast<double>(cfg.epsilon_decay_steps);
  return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
}

namespace {

std::vector<int> layer_dims(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

}  // namespace

NeuralResult train_neural(const WcmdpSpec& spec, NeuralAlgo algo, const NeuralConfig& cfg, const LambdaGrid& grid,
                          const NeuralSeeds& seeds) {
  if (spec.num_actions() > cfg.max_joint_actions) {
    throw std::invalid_argument("joint action space too large for the main network");
  }
  if (cfg.batch_size == 0 || cfg.target_sync == 0) throw std::invalid_argument("batch size and sync period must be positive");
  if (cfg.kappa < 0.0) throw std::invalid_argument("kappa must be nonnegative");
  if (algo == NeuralAlgo::kWcdqn && grid.dimension() != spec.num_constraints()) {
    throw std::invalid_argument("multiplier dimension does not match the constraint count");
  }

  Rng init_rng(seeds.init);
  Rng bank_rng(seeds.bank_init);
  Rng explore_rng(seeds.explore);
  Rng env_rng(seeds.env);
  Rng lambda_rng(seeds.lambda);
  Rng replay_rng(seeds.replay);

  const bool wcdqn = algo == NeuralAlgo::kWcdqn;
  const MainEncoder menc(spec);
  const SubagentEncoder senc(spec);

  NeuralResult res;
  res.main = Mlp::random(layer_dims(menc.input_size(), cfg.hidden, menc.output_size()), init_rng);
  Mlp main_target = res.main;
  AdamState main_opt(res.main.params().size());

  Mlp sub_target;
  AdamState sub_opt;
  if (wcdqn) {
    res.subagent = Mlp::random(layer_dims(senc.input_size(), cfg.hidden, senc.output_size()), bank_rng);
    sub_target = res.subagent;
    sub_opt = AdamState(res.subagent.params().size());
  }
  res.b_table = BTable(spec.exo_size(), spec.num_constraints());
  VisitCounter exo_visits(static_cast<std::size_t>(spec.exo_size()));

  ReplayBuffer buffer(cfg.replay_capacity);
  const double gamma = spec.discount();
  const double scale = 1.0 / static_cast<double>(cfg.batch_size);
  const bool use_upper = wcdqn && cfg.kappa != 0.0;

  std::vector<const Transition*> batch(cfg.batch_size);
  std::vector<double> targets(cfg.batch_size);
  std::vector<double> uppers;
  std::vector<std::size_t> lambda_index(cfg.batch_size);

  res.returns.reserve(cfg.episodes);
  for (int episode = 0; episode < cfg.episodes; ++episode) {
    FullState s = spec.sample_initial_state(env_rng);
    double total = 0.0;
    double weight = 1.0;
    for (int t = 0; t < cfg.episode_length; ++t) {
      const auto feasible = feasible_action_indices(spec, s);
      std::size_t a_index;
      if (res.steps < cfg.warmup) {
        if (feasible.empty()) throw std::runtime_error("empty feasible set");
        a_index = feasible[explore_rng.uniform_index(feasible.size())];
      } else {
        const auto q = mlp_forward(res.main, menc.encode(s));
        a_index = epsilon_greedy_index(feasible, q, epsilon_at(cfg, res.steps), explore_rng);
      }
      const FactoredAction action = spec.index_action(a_index);
      if (!spec.is_feasible(s, action)) throw std::logic_error("infeasible action emitted");

      Transition tr = sample_step(spec, s, action, env_rng);
      total += weight * tr.total_reward();
      if (cfg.discounted_returns) weight *= gamma;
      s = tr.next_state;
      const int w = tr.state.exo;
      const int w_next = tr.next_state.exo;
      const std::vector<double> rhs = tr.rhs;
      buffer.push(std::move(tr));
      ++res.steps;

      const bool learn = res.steps > cfg.warmup && buffer.size() >= cfg.batch_size;
      if (!learn) {
        if (wcdqn) b_update(res.b_table, w, rhs, w_next, gamma, cfg.eta.rate(exo_visits.increment(w)));
        continue;
      }

      const auto idx = buffer.sample_indices(cfg.batch_size, replay_rng);
      for (std::size_t k = 0; k < idx.size(); ++k) batch[k] = &buffer.at(idx[k]);

      if (wcdqn && cfg.subagent_steps) {
        for (auto& k : lambda_index) k = lambda_rng.uniform_index(grid.size());
        const auto items = subagent_items(spec, senc, sub_target, grid, batch, lambda_index);
        const LossResult sub_loss = td_loss(res.subagent, items, 0.0, scale);
        adam_step(res.subagent.params(), sub_loss.grad, sub_opt, cfg.adam);
      }
      if (wcdqn) b_update(res.b_table, w, rhs, w_next, gamma, cfg.eta.rate(exo_visits.increment(w)));

      for (std::size_t k = 0; k < batch.size(); ++k) {
        targets[k] = algo == NeuralAlgo::kDoubleDqn ? double_dqn_target(spec, menc, res.main, main_target, *batch[k])
                                                    : dqn_target(spec, menc, main_target, *batch[k]);
      }
      uppers.clear();
      if (use_upper) {
        for (const Transition* b : batch) {
          uppers.push_back(upper_target(spec, senc, sub_target, grid, res.b_table, *b));
        }
      }
      const auto items = main_items(spec, menc, batch, targets, uppers);
      const LossResult main_loss = td_loss(res.main, items, wcdqn ? cfg.kappa : 0.0, scale);
      adam_step(res.main.params(), main_loss.grad, main_opt, cfg.adam);

      ++res.updates;
      if (res.updates % cfg.target_sync == 0) {
        main_target = res.main;
        if (wcdqn) sub_target = res.subagent;
        ++res.target_syncs;
      }
    }
    res.returns.push_back(total);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'W', 'C', 'M', 'D', 'P', 'C', 'K', '\0'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("truncated checkpoint");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint string");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("truncated checkpoint");
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  out.write(kMagic, sizeof kMagic);
  put_u64(out, kCheckpointVersion);
  put_string(out, ck.env_id);
  put_u64(out, ck.dims.size());
  for (int d : ck.dims) put_u64(out, static_cast<std::uint64_t>(d));
  put_u64(out, ck.seed);
  put_u64(out, ck.arrays.size());
  for (const auto& [name, values] : ck.arrays) {
    put_string(out, name);
    put_u64(out, values.size());
    for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("failed to write checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad checkpoint magic");
  if (get_u64(in) != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
  Checkpoint ck;
  ck.env_id = get_string(in);
  const std::uint64_t n_dims = get_u64(in);
  if (n_dims > 64) throw std::runtime_error("corrupt checkpoint dims");
  for (std::uint64_t k = 0; k < n_dims; ++k) ck.dims.push_back(static_cast<int>(get_u64(in)));
  ck.seed = get_u64(in);
  const std::uint64_t n_arrays = get_u64(in);
  for (std::uint64_t k = 0; k < n_arrays; ++k) {
    std::string name = get_string(in);
    const std::uint64_t len = get_u64(in);
    std::vector<double> values;
    values.reserve(std::min<std::uint64_t>(len, 1u << 24));
    for (std::uint64_t j = 0; j < len; ++j) values.push_back(std::bit_cast<double>(get_u64(in)));
    ck.arrays.emplace(std::move(name), std::move(values));
  }
  return ck;
}

}  // namespace wcmdp
