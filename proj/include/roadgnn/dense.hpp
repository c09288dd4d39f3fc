#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "roadgnn/common.hpp"

namespace roadgnn {

// Row-major dense matrix of doubles. Small on purpose: just what the
// two-layer GNN and its classifier head need.
struct Dense {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Dense() = default;
  Dense(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

  double* row(std::size_t r) { return v.data() + r * cols; }
  const double* row(std::size_t r) const { return v.data() + r * cols; }

  bool all_finite() const {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  }
};

struct LinearLayer {
  Dense weight;  // out x in
  Dense bias;    // 1 x out

  LinearLayer() = default;
  LinearLayer(std::size_t out_dim, std::size_t in_dim)
      : weight(out_dim, in_dim), bias(1, out_dim) {}

  std::size_t in_dim() const { return weight.cols; }
  std::size_t out_dim() const { return weight.rows; }
};

// Glorot-style uniform init in +-sqrt(6/(in+out)).
inline void init_linear(LinearLayer& layer, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(layer.in_dim() + layer.out_dim()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : layer.weight.v) w = dist(rng);
  std::fill(layer.bias.v.begin(), layer.bias.v.end(), 0.0);
}

// output = input * W^T + b, one row per input row.
inline Dense linear_forward(const LinearLayer& layer, const Dense& input) {
  if (input.cols != layer.in_dim())
    throw SchemaError("linear_forward: input cols " + std::to_string(input.cols) +
                      " != layer in-dim " + std::to_string(layer.in_dim()));
  Dense out(input.rows, layer.out_dim());
  for (std::size_t r = 0; r < input.rows; ++r) {
    const double* x = input.row(r);
    double* y = out.row(r);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double* w = layer.weight.row(o);
      double acc = layer.bias.v[o];
      for (std::size_t i = 0; i < layer.in_dim(); ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

// Accumulates dW, db and returns dInput for upstream dOut.
inline Dense linear_backward(const LinearLayer& layer, const Dense& input, const Dense& d_out,
                             Dense& d_weight, Dense& d_bias) {
  Dense d_in(input.rows, layer.in_dim());
  for (std::size_t r = 0; r < input.rows; ++r) {
    const double* x = input.row(r);
    const double* dy = d_out.row(r);
    double* dx = d_in.row(r);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      d_bias.v[o] += g;
      double* dw = d_weight.row(o);
      const double* w = layer.weight.row(o);
      for (std::size_t i = 0; i < layer.in_dim(); ++i) {
        dw[i] += g * x[i];
        dx[i] += g * w[i];
      }
    }
  }
  return d_in;
}

inline Dense relu(const Dense& input) {
  Dense out = input;
  for (double& x : out.v) x = std::max(0.0, x);
  return out;
}

// Subgradient at 0 taken as 0.
inline Dense relu_backward(const Dense& input, const Dense& upstream) {
  Dense out(input.rows, input.cols);
  for (std::size_t i = 0; i < input.v.size(); ++i)
    out.v[i] = input.v[i] > 0.0 ? upstream.v[i] : 0.0;
  return out;
}

enum class Mode { Train, Eval };

// Inverted dropout: survivors scaled by 1/(1-p) so eval mode is identity.
inline Dense dropout(const Dense& input, double p, Mode mode, Rng& rng, Dense* mask_out = nullptr) {
  if (p < 0.0 || p >= 1.0) throw SchemaError("dropout: rate must be in [0,1)");
  if (mode == Mode::Eval || p == 0.0) {
    if (mask_out) {
      *mask_out = Dense(input.rows, input.cols);
      std::fill(mask_out->v.begin(), mask_out->v.end(), 1.0);
    }
    return input;
  }
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  Dense mask(input.rows, input.cols);
  Dense out(input.rows, input.cols);
  for (std::size_t i = 0; i < input.v.size(); ++i) {
    const double m = keep(rng) ? scale : 0.0;
    mask.v[i] = m;
    out.v[i] = input.v[i] * m;
  }
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

inline Dense apply_mask(const Dense& upstream, const Dense& mask) {
  Dense out(upstream.rows, upstream.cols);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = upstream.v[i] * mask.v[i];
  return out;
}

// Mean of -log softmax(logits)[label] over rows, with max-subtraction.
// grad = (softmax - onehot) / n.
inline std::pair<double, Dense> softmax_cross_entropy(const Dense& logits,
                                                      const std::vector<int>& labels) {
  if (labels.size() != logits.rows)
    throw SchemaError("softmax_cross_entropy: label count != logit rows");
  const std::size_t n = logits.rows, c = logits.cols;
  Dense grad(n, c);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || std::size_t(labels[r]) >= c)
      throw SchemaError("softmax_cross_entropy: label out of range");
    const double* z = logits.row(r);
    const double zmax = *std::max_element(z, z + c);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(z[j] - zmax);
    const double log_denom = std::log(denom);
    loss += -(z[labels[r]] - zmax - log_denom);
    double* g = grad.row(r);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(z[j] - zmax - log_denom) / double(n);
    g[labels[r]] -= 1.0 / double(n);
  }
  return {loss / double(n), std::move(grad)};
}

// SGD with momentum and loss-coupled L2 weight decay:
//   g' = g + lambda*w;  v <- mu*v + g';  w <- w - lr*v
struct OptimizerState {
  double base_lr = 0.1;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double gamma = 1.0;
  int step_period = 25;  // epochs between lr drops
  std::vector<Dense> velocity;

  void attach(const std::vector<Dense*>& params) {
    velocity.clear();
    for (const Dense* p : params) velocity.emplace_back(p->rows, p->cols);
  }
};

// decay_mask[i] == false exempts the parameter (biases) from weight decay.
inline void sgd_step(const std::vector<Dense*>& params, const std::vector<const Dense*>& grads,
                     OptimizerState& state, const std::vector<bool>& decay_mask = {}) {
  if (params.size() != grads.size() || params.size() != state.velocity.size())
    throw SchemaError("sgd_step: parameter/gradient/velocity count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Dense& w = *params[i];
    const Dense& g = *grads[i];
    Dense& v = state.velocity[i];
    if (!g.all_finite()) throw std::runtime_error("sgd_step: non-finite gradient, aborting");
    const double lambda = (decay_mask.empty() || decay_mask[i]) ? state.weight_decay : 0.0;
    for (std::size_t j = 0; j < w.v.size(); ++j) {
      const double gp = g.v[j] + lambda * w.v[j];
      v.v[j] = state.momentum * v.v[j] + gp;
      w.v[j] -= state.lr * v.v[j];
    }
  }
}

// lr(epoch) = lr0 * gamma^floor(epoch / period)
inline void lr_schedule_step(OptimizerState& state, int epoch) {
  if (epoch < 0) throw SchemaError("lr_schedule_step: negative epoch");
  state.lr = state.base_lr * std::pow(state.gamma, epoch / state.step_period);
}

// Central-difference gradient verification. Samples up to max_params entries
// across all tensors and reports the max relative error. The loss closure
// must be deterministic (dropout in eval mode, sampling frozen).
inline double gradient_check(const std::function<double()>& loss_fn,
                             const std::vector<Dense*>& params,
                             const std::vector<const Dense*>& analytic_grads,
                             std::size_t max_params, Rng& rng, double h = 1e-5) {
  std::vector<std::pair<std::size_t, std::size_t>> index;  // (tensor, element)
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t j = 0; j < params[t]->v.size(); ++j) index.emplace_back(t, j);
  std::shuffle(index.begin(), index.end(), rng);
  if (index.size() > max_params) index.resize(max_params);

  double max_rel_err = 0.0;
  for (auto [t, j] : index) {
    double& w = params[t]->v[j];
    const double saved = w;
    w = saved + h;
    const double lp = loss_fn();
    w = saved - h;
    const double lm = loss_fn();
    w = saved;
    const double numeric = (lp - lm) / (2.0 * h);
    const double analytic = analytic_grads[t]->v[j];
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel_err = std::max(max_rel_err, rel);
  }
  return max_rel_err;
}

}  // namespace roadgnn
