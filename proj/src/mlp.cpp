#include <cmath>
#include <stdexcept>

#include "wcmdp/neural.hpp"

namespace wcmdp {

Mlp::Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.size() < 2) throw std::invalid_argument("network needs at least input and output sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] <= 0 || dims_[l + 1] <= 0) throw std::invalid_argument("layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::random(std::vector<int> dims, Rng& rng) {
  Mlp net(std::move(dims));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(net.dims_[l]));
    const std::size_t end = l + 1 < net.num_layers() ? net.offsets_[l + 1] : net.params_.size();
    for (std::size_t k = net.offsets_[l]; k < end; ++k) net.params_[k] = rng.uniform(-bound, bound);
  }
  return net;
}

void mlp_forward(const Mlp& net, std::span<const double> input, MlpCache& cache) {
  if (static_cast<int>(input.size()) != net.input_size()) throw std::invalid_argument("input size mismatch");
  const auto& dims = net.dims();
  const auto& p = net.params();
  cache.activations.resize(dims.size());
  cache.activations[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const double* w = p.data() + net.weight_offset(l);
    const double* b = p.data() + net.bias_offset(l);
    const std::vector<double>& x = cache.activations[l];
    std::vector<double>& y = cache.activations[l + 1];
    y.assign(out, 0.0);
    const bool hidden = l + 1 < net.num_layers();
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + static_cast<std::size_t>(o) * in;
      for (int k = 0; k < in; ++k) acc += row[k] * x[k];
      y[o] = hidden && acc < 0.0 ? 0.0 : acc;
    }
  }
}

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input) {
  MlpCache cache;
  mlp_forward(net, input, cache);
  return std::move(cache.activations.back());
}

void mlp_backward(const Mlp& net, const MlpCache& cache, std::span<const double> output_grad,
                  std::span<double> grad) {
  if (static_cast<int>(output_grad.size()) != net.output_size()) {
    throw std::invalid_argument("output gradient size mismatch");
  }
  if (grad.size() != net.params().size()) throw std::invalid_argument("gradient size mismatch");
  const auto& dims = net.dims();
  const auto& p = net.params();
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const int in = dims[l];
    const int out = dims[l + 1];
    const std::vector<double>& x = cache.activations[l];
    const double* w = p.data() + net.weight_offset(l);
    double* gw = grad.data() + net.weight_offset(l);
    double* gb = grad.data() + net.bias_offset(l);
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      double* grow = gw + static_cast<std::size_t>(o) * in;
      for (int k = 0; k < in; ++k) grow[k] += d * x[k];
    }
    if (l == 0) break;
    // Hidden activations are post-rectifier, so a zero value means an inactive unit.
    std::vector<double> prev(in, 0.0);
    for (int k = 0; k < in; ++k) {
      if (x[k] <= 0.0) continue;
      double acc = 0.0;
      for (int o = 0; o < out; ++o) acc += w[static_cast<std::size_t>(o) * in + k] * delta[o];
      prev[k] = acc;
    }
    delta = std::move(prev);
  }
}

std::vector<double> mask_outputs(std::span<const double> values, std::span<const std::size_t> allowed) {
  std::vector<double> out(values.size(), kMaskedValue);
  for (std::size_t a : allowed) out.at(a) = values[a];
  return out;
}

std::size_t masked_argmax(std::span<const double> values, std::span<const std::size_t> allowed) {
  if (allowed.empty()) throw std::runtime_error("no valid action");
  std::size_t best = allowed[0];
  for (std::size_t a : allowed) {
    if (values[a] > values[best]) best = a;
  }
  return best;
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state, const AdamConfig& cfg) {
  if (grad.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("optimizer size mismatch");
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * grad[k];
    state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

}  // namespace wcmdp
