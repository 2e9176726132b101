#pragma once

// Small dense networks, replay, and the DQN / Double DQN / WCDQN trainers.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wcmdp/core.hpp"
#include "wcmdp/exact.hpp"
#include "wcmdp/rng.hpp"
#include "wcmdp/tabular.hpp"

namespace wcmdp {

// ---------------------------------------------------------------------------
// Multilayer perceptron

/// Fully connected network with rectifier hidden layers and a linear output.
/// Parameters are stored flat, layer by layer: W (out x in, row-major), then b.
class Mlp {
 public:
  Mlp() = default;
  /// `dims` = {input, hidden..., output}; all parameters zero.
  explicit Mlp(std::vector<int> dims);

  /// Weights and biases Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Mlp random(std::vector<int> dims, Rng& rng);

  const std::vector<int>& dims() const { return dims_; }
  int input_size() const { return dims_.front(); }
  int output_size() const { return dims_.back(); }
  std::size_t num_layers() const { return dims_.size() - 1; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + static_cast<std::size_t>(dims_[layer]) * dims_[layer + 1];
  }

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/// Per-layer activations from one forward pass, reused by backward.
struct MlpCache {
  std::vector<std::vector<double>> activations;  // [0] = input, back() = output

  std::span<const double> output() const { return activations.back(); }
};

/// Throws std::invalid_argument on an input of the wrong length.
void mlp_forward(const Mlp& net, std::span<const double> input, MlpCache& cache);
std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input);

/// Adds d(output . output_grad)/d(params) into `grad`. The rectifier
/// derivative at exactly zero preactivation is taken as 0.
void mlp_backward(const Mlp& net, const MlpCache& cache, std::span<const double> output_grad,
                  std::span<double> grad);

inline constexpr double kMaskedValue = -std::numeric_limits<double>::infinity();

/// Copy of `values` with every index outside `allowed` set to kMaskedValue.
std::vector<double> mask_outputs(std::span<const double> values, std::span<const std::size_t> allowed);

/// First maximizer of values over `allowed`. Throws on an empty set.
std::size_t masked_argmax(std::span<const double> values, std::span<const std::size_t> allowed);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Replay

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  /// Overwrites the oldest element once full.
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th element, oldest first.
  const Transition& at(std::size_t i) const;

  /// `count` indices (oldest-first numbering) drawn uniformly with replacement.
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;  // slot of the oldest element once full
  std::vector<Transition> items_;
};

// ---------------------------------------------------------------------------
// Encoders

/// One-hot x_i for every subproblem followed by one-hot w. One output per
/// joint action.
class MainEncoder {
 public:
  explicit MainEncoder(const WcmdpSpec& spec);
  int input_size() const { return input_size_; }
  int output_size() const { return output_size_; }
  std::vector<double> encode(const FullState& s) const;

 private:
  const WcmdpSpec* spec_;
  int input_size_;
  int output_size_;
};

/// One-hot subproblem id, raw lambda, one-hot x_i padded to max |X_i|,
/// one-hot w. Output head has max |A_i| entries; entries at or past |A_i| are
/// masked.
class SubagentEncoder {
 public:
  explicit SubagentEncoder(const WcmdpSpec& spec);
  int input_size() const { return input_size_; }
  int output_size() const { return output_size_; }
  std::vector<double> encode(int i, std::span<const double> lambda, int x, int w) const;
  /// Valid output indices for subproblem i.
  std::vector<std::size_t> valid_actions(int i) const;

 private:
  const WcmdpSpec* spec_;
  int input_size_;
  int output_size_;
};

// ---------------------------------------------------------------------------
// Losses and targets

/// One regression term: output `action` of the network at `input` is pulled
/// towards `target`, with a one-sided penalty above `upper`.
struct TdItem {
  std::vector<double> input;
  std::size_t action = 0;
  double target = 0.0;
  double upper = std::numeric_limits<double>::infinity();
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

/// scale * sum_k [(target_k - Q_k)^2 + kappa ((Q_k - upper_k)_+)^2] and its
/// gradient. Targets are constants. The penalty branch is skipped entirely
/// when kappa is 0 or Q_k <= upper_k.
LossResult td_loss(const Mlp& net, std::span<const TdItem> items, double kappa, double scale);

/// r + gamma * max over feasible a' at s' of Q(s', a'; target_net).
double dqn_target(const WcmdpSpec& spec, const MainEncoder& enc, const Mlp& target_net, const Transition& t);

/// r + gamma * Q(s', argmax_{feasible a'} Q(s', a'; online); target_net).
double double_dqn_target(const WcmdpSpec& spec, const MainEncoder& enc, const Mlp& online, const Mlp& target_net,
                         const Transition& t);

/// r_i - lambda^T d(s_i, a_i) + gamma * max over a'_i in A_i of Q^lambda_i(s'_i, a'_i; target_net).
double subagent_target(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& target_net,
                       const SubTransition& part, int i, std::span<const double> lambda);

/// Per-multiplier, per-subproblem outputs Q^lambda_i(s_i, .) at a full state.
std::vector<std::vector<std::vector<double>>> subagent_outputs(const WcmdpSpec& spec, const SubagentEncoder& enc,
                                                               const Mlp& net, const LambdaGrid& grid,
                                                               const FullState& s);

/// min over the grid of lambda^T B(w) + sum_i Q^lambda_i(s_i, a_i), for every
/// joint action index (feasible or not).
std::vector<double> network_bound(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& net,
                                  const LambdaGrid& grid, const BTable& b_table, const FullState& s);

/// r + gamma * max over all joint a' of network_bound at s'.
double upper_target(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& target_net,
                    const LambdaGrid& grid, const BTable& b_table, const Transition& t);

/// Main-network regression items for a batch. `uppers` may be empty.
std::vector<TdItem> main_items(const WcmdpSpec& spec, const MainEncoder& enc,
                               std::span<const Transition* const> batch, std::span<const double> targets,
                               std::span<const double> uppers);

/// Subagent regression items: one per (batch element, subproblem), with
/// lambda_index[k] selecting the multiplier of element k.
std::vector<TdItem> subagent_items(const WcmdpSpec& spec, const SubagentEncoder& enc, const Mlp& target_net,
                                   const LambdaGrid& grid, std::span<const Transition* const> batch,
                                   std::span<const std::size_t> lambda_index);

// ---------------------------------------------------------------------------
// Training

enum class NeuralAlgo { kDqn, kDoubleDqn, kWcdqn };

struct NeuralConfig {
  std::vector<int> hidden{64, 32};
  AdamConfig adam;
  std::size_t replay_capacity = 100000;
  std::size_t warmup = 10000;
  std::size_t batch_size = 32;
  std::size_t target_sync = 1000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  std::size_t epsilon_decay_steps = 30000;
  double kappa = 10.0;
  bool subagent_steps = true;
  StepSchedule eta;
  int episodes = 100;
  int episode_length = 25;
  bool discounted_returns = false;
  /// Joint action spaces above this size are refused.
  std::size_t max_joint_actions = 4096;
};

/// Independent random streams of one run.
struct NeuralSeeds {
  std::uint64_t init = 1;
  std::uint64_t bank_init = 2;
  std::uint64_t explore = 3;
  std::uint64_t env = 4;
  std::uint64_t lambda = 5;
  std::uint64_t replay = 6;
};

struct NeuralResult {
  std::vector<double> returns;  // one per episode
  Mlp main;
  Mlp subagent;  // empty unless WCDQN
  BTable b_table;
  std::uint64_t steps = 0;
  std::uint64_t updates = 0;
  std::uint64_t target_syncs = 0;
};

/// Linear decay from epsilon_start to epsilon_end over epsilon_decay_steps.
double epsilon_at(const NeuralConfig& cfg, std::uint64_t step);

/// Runs one training replication. The first `warmup` steps act uniformly at
/// random and only fill the buffer; afterwards each step acts
/// epsilon-greedily over feasible actions, stores the transition and takes
/// one optimization step per network. WCDQN additionally updates B(w) from
/// every observed transition. Throws std::invalid_argument when the joint
/// action space exceeds cfg.max_joint_actions; std::logic_error if an
/// infeasible action is ever emitted.
NeuralResult train_neural(const WcmdpSpec& spec, NeuralAlgo algo, const NeuralConfig& cfg, const LambdaGrid& grid,
                          const NeuralSeeds& seeds);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  std::string env_id;
  std::vector<int> dims;  // main network architecture
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> arrays;

  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "WCMDPCK\0", version, then length-prefixed fields, little-endian.
void write_checkpoint(std::ostream& out, const Checkpoint& ck);
/// Throws std::runtime_error on a bad magic, version or truncated stream.
Checkpoint read_checkpoint(std::istream& in);

}  // namespace wcmdp
