#include "rat/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace rat {
namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double activate(Activation a, double x) { return a == Activation::tanh ? std::tanh(x) : std::max(0.0, x); }

double activate_grad(Activation a, double pre) {
  if (a == Activation::tanh) {
    const double t = std::tanh(pre);
    return 1.0 - t * t;
  }
  return pre > 0.0 ? 1.0 : 0.0;
}

double clamp_log_std(double v) { return std::clamp(v, kLogStdMin, kLogStdMax); }
bool log_std_saturated(double v) { return v < kLogStdMin || v > kLogStdMax; }

void check_state(const PolicySpec& spec, const Vector& state) {
  if (state.size() != spec.obs_dim()) {
    throw ShapeError("policy: state has " + std::to_string(state.size()) + " entries, expected " +
                     std::to_string(spec.obs_dim()));
  }
}

void check_theta(const PolicySpec& spec, const ParamVector& theta) {
  if (theta.size() != spec.num_params()) {
    throw ShapeError("policy: theta has " + std::to_string(theta.size()) + " entries, expected " +
                     std::to_string(spec.num_params()));
  }
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double lse = m + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

struct HeadEval {
  double log_prob = 0.0;
  std::vector<double> out_grad;   // d log pi / d network outputs
  std::vector<double> std_grad;   // d log pi / d log_std (gaussian)
};

HeadEval eval_head(const PolicySpec& spec, const ParamVector& theta,
                   std::span<const double> outputs, const Action& action) {
  HeadEval h;
  h.out_grad.assign(spec.net.output_dim(), 0.0);
  const std::size_t d = spec.action_dim();
  if (spec.head == HeadKind::categorical) {
    const auto* idx = std::get_if<std::size_t>(&action);
    if (idx == nullptr) throw ShapeError("policy: categorical head needs a discrete action");
    if (*idx >= d) throw ShapeError("policy: action index out of range");
    const auto lp = log_softmax(outputs.subspan(0, d));
    h.log_prob = lp[*idx];
    for (std::size_t k = 0; k < d; ++k) h.out_grad[k] = (k == *idx ? 1.0 : 0.0) - std::exp(lp[k]);
    return h;
  }
  const auto* a = std::get_if<Vector>(&action);
  if (a == nullptr) throw ShapeError("policy: gaussian head needs a continuous action");
  if (a->size() != d) throw ShapeError("policy: action dimension mismatch");
  h.std_grad.assign(d, 0.0);
  const std::size_t off = spec.net_params();
  for (std::size_t k = 0; k < d; ++k) {
    const double raw = theta[off + k];
    const double ls = clamp_log_std(raw);
    const double inv_var = std::exp(-2.0 * ls);
    const double diff = (*a)[k] - outputs[k];
    h.log_prob += -0.5 * diff * diff * inv_var - ls - kHalfLog2Pi;
    h.out_grad[k] = diff * inv_var;
    h.std_grad[k] = log_std_saturated(raw) ? 0.0 : -1.0 + diff * diff * inv_var;
  }
  return h;
}

// Log-probability and its gradient from a single forward/backward pass.
double score_into(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
                  const Action& action, double value_weight, std::span<double> grad) {
  check_state(spec, state);
  MlpCache cache;
  const auto out = mlp_forward(spec.net, theta.span().subspan(0, spec.net_params()), state.span(), &cache);
  auto h = eval_head(spec, theta, out, action);
  if (value_weight != 0.0) h.out_grad[spec.action_dim()] = value_weight;
  mlp_backward(spec.net, theta.span().subspan(0, spec.net_params()), cache, h.out_grad,
               grad.subspan(0, spec.net_params()));
  for (std::size_t k = 0; k < h.std_grad.size(); ++k) grad[spec.net_params() + k] += h.std_grad[k];
  return h.log_prob;
}

}  // namespace

void MlpSpec::validate() const {
  if (layer_sizes.size() < 2) throw ConfigError("MlpSpec: need at least input and output layers");
  for (auto w : layer_sizes) {
    if (w == 0) throw ConfigError("MlpSpec: layer widths must be positive");
  }
}

std::size_t MlpSpec::num_params() const {
  std::size_t p = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) p += layer_sizes[l + 1] * (layer_sizes[l] + 1);
  return p;
}

std::vector<double> mlp_forward(const MlpSpec& spec, std::span<const double> params,
                                std::span<const double> input, MlpCache* cache) {
  if (input.size() != spec.input_dim()) throw ShapeError("mlp_forward: input dimension mismatch");
  if (params.size() != spec.num_params()) throw ShapeError("mlp_forward: parameter count mismatch");
  std::vector<double> x(input.begin(), input.end());
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  std::size_t off = 0;
  const std::size_t n_layers = spec.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
    const double* w = params.data() + off;
    const double* b = w + out * in;
    std::vector<double> z(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < in; ++j) s += w[i * in + j] * x[j];
      z[i] = s;
    }
    off += out * (in + 1);
    if (cache != nullptr) cache->inputs.push_back(x);
    if (l + 1 < n_layers) {
      if (cache != nullptr) cache->pre.push_back(z);
      for (double& v : z) v = activate(spec.activation, v);
    }
    x = std::move(z);
  }
  return x;
}

void mlp_backward(const MlpSpec& spec, std::span<const double> params, const MlpCache& cache,
                  std::span<const double> out_grad, std::span<double> grad) {
  const std::size_t n_layers = spec.layer_sizes.size() - 1;
  if (cache.inputs.size() != n_layers) throw ShapeError("mlp_backward: cache does not match spec");
  if (out_grad.size() != spec.output_dim()) throw ShapeError("mlp_backward: output gradient size");
  if (grad.size() != spec.num_params()) throw ShapeError("mlp_backward: gradient size");

  std::vector<std::size_t> offsets(n_layers);
  std::size_t off = 0;
  for (std::size_t l = 0; l < n_layers; ++l) {
    offsets[l] = off;
    off += spec.layer_sizes[l + 1] * (spec.layer_sizes[l] + 1);
  }

  std::vector<double> delta(out_grad.begin(), out_grad.end());
  for (std::size_t l = n_layers; l-- > 0;) {
    const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
    const double* w = params.data() + offsets[l];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + out * in;
    const auto& x = cache.inputs[l];
    for (std::size_t i = 0; i < out; ++i) {
      const double di = delta[i];
      if (di == 0.0) continue;
      for (std::size_t j = 0; j < in; ++j) gw[i * in + j] += di * x[j];
      gb[i] += di;
    }
    if (l == 0) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t i = 0; i < out; ++i) {
      const double di = delta[i];
      if (di == 0.0) continue;
      for (std::size_t j = 0; j < in; ++j) prev[j] += w[i * in + j] * di;
    }
    const auto& pre = cache.pre[l - 1];
    for (std::size_t j = 0; j < in; ++j) prev[j] *= activate_grad(spec.activation, pre[j]);
    delta = std::move(prev);
  }
}

std::vector<double> mlp_init(const MlpSpec& spec, std::mt19937_64& rng, double out_scale) {
  spec.validate();
  std::vector<double> params;
  params.reserve(spec.num_params());
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n_layers = spec.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
    const double scale = (l + 1 == n_layers ? out_scale : 1.0) / std::sqrt(static_cast<double>(in));
    for (std::size_t k = 0; k < out * in; ++k) params.push_back(scale * normal(rng));
    params.insert(params.end(), out, 0.0);
  }
  return params;
}

void PolicySpec::validate() const {
  net.validate();
  const std::size_t needed = value_head ? 2 : 1;
  if (net.output_dim() < needed) throw ConfigError("PolicySpec: network output too narrow");
  if (head == HeadKind::categorical && action_dim() < 2) {
    throw ConfigError("PolicySpec: categorical head needs at least two actions");
  }
}

std::size_t PolicySpec::action_dim() const { return net.output_dim() - (value_head ? 1 : 0); }

std::size_t PolicySpec::num_params() const {
  return net.num_params() + (head == HeadKind::gaussian ? action_dim() : 0);
}

ParamVector init_policy_params(const PolicySpec& spec, std::mt19937_64& rng, double initial_log_std) {
  spec.validate();
  auto p = mlp_init(spec.net, rng);
  if (spec.head == HeadKind::gaussian) p.insert(p.end(), spec.action_dim(), initial_log_std);
  return ParamVector(std::move(p));
}

double log_prob(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
                const Action& action) {
  check_theta(spec, theta);
  check_state(spec, state);
  const auto out = mlp_forward(spec.net, theta.span().subspan(0, spec.net_params()), state.span());
  return eval_head(spec, theta, out, action).log_prob;
}

Vector score(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
             const Action& action) {
  check_theta(spec, theta);
  Vector g(spec.num_params());
  score_into(spec, theta, state, action, 0.0, g.span());
  return g;
}

ScoreMatrix per_sample_scores(const PolicySpec& spec, const ParamVector& theta,
                              std::span<const Vector> states, std::span<const Action> actions) {
  check_theta(spec, theta);
  if (states.size() != actions.size()) throw ShapeError("per_sample_scores: states/actions length");
  ScoreMatrix h(states.size(), spec.num_params());
  for (std::size_t i = 0; i < states.size(); ++i) score_into(spec, theta, states[i], actions[i], 0.0, h.row(i));
  return h;
}

double value(const PolicySpec& spec, const ParamVector& theta, const Vector& state) {
  if (!spec.value_head) throw ConfigError("value: policy has no value head");
  check_theta(spec, theta);
  check_state(spec, state);
  const auto out = mlp_forward(spec.net, theta.span().subspan(0, spec.net_params()), state.span());
  return out[spec.action_dim()];
}

Matrix value_scores(const PolicySpec& spec, const ParamVector& theta, std::span<const Vector> states,
                    const Vector& residuals) {
  if (!spec.value_head) throw ConfigError("value_scores: policy has no value head");
  check_theta(spec, theta);
  if (states.size() != residuals.size()) throw ShapeError("value_scores: residual length");
  Matrix h(states.size(), spec.num_params());
  std::vector<double> out_grad(spec.net.output_dim(), 0.0);
  for (std::size_t i = 0; i < states.size(); ++i) {
    check_state(spec, states[i]);
    MlpCache cache;
    mlp_forward(spec.net, theta.span().subspan(0, spec.net_params()), states[i].span(), &cache);
    out_grad[spec.action_dim()] = residuals[i];
    mlp_backward(spec.net, theta.span().subspan(0, spec.net_params()), cache, out_grad,
                 h.row(i).subspan(0, spec.net_params()));
  }
  return h;
}

ScoreMatrix joint_scores_shared_ac(const PolicySpec& spec, const ParamVector& theta,
                                   std::span<const Vector> states, std::span<const Action> actions,
                                   const Vector& value_noise) {
  if (!spec.value_head) throw ConfigError("joint_scores_shared_ac: policy has no value head");
  check_theta(spec, theta);
  if (states.size() != actions.size() || states.size() != value_noise.size()) {
    throw ShapeError("joint_scores_shared_ac: batch length mismatch");
  }
  ScoreMatrix h(states.size(), spec.num_params());
  for (std::size_t i = 0; i < states.size(); ++i) {
    score_into(spec, theta, states[i], actions[i], value_noise[i], h.row(i));
  }
  return h;
}

Vector surrogate_gradient(const PolicySpec& spec, const ParamVector& theta,
                          std::span<const double> old_log_probs, std::span<const Vector> states,
                          std::span<const Action> actions, const Vector& adv) {
  check_theta(spec, theta);
  const std::size_t n = states.size();
  if (actions.size() != n || old_log_probs.size() != n || adv.size() != n) {
    throw ShapeError("surrogate_gradient: batch length mismatch");
  }
  Vector g(spec.num_params());
  if (n == 0) return g;
  std::vector<double> sample(spec.num_params());
  for (std::size_t i = 0; i < n; ++i) {
    if (adv[i] == 0.0) continue;
    std::fill(sample.begin(), sample.end(), 0.0);
    const double lp = score_into(spec, theta, states[i], actions[i], 0.0, sample);
    const double ratio = std::exp(lp - old_log_probs[i]);
    if (ratio < kRatioMin || ratio > kRatioMax) continue;
    axpy(ratio * adv[i] / static_cast<double>(n), sample, g.span());
  }
  return g;
}

Vector surrogate_gradient(const PolicySpec& spec, const ParamVector& theta,
                          const ParamVector& theta_old, std::span<const Vector> states,
                          std::span<const Action> actions, const Vector& adv) {
  if (states.size() != actions.size()) throw ShapeError("surrogate_gradient: batch length mismatch");
  std::vector<double> old(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) old[i] = log_prob(spec, theta_old, states[i], actions[i]);
  return surrogate_gradient(spec, theta, old, states, actions, adv);
}

double surrogate_objective(const PolicySpec& spec, const ParamVector& theta,
                           std::span<const double> old_log_probs, std::span<const Vector> states,
                           std::span<const Action> actions, const Vector& adv) {
  const std::size_t n = states.size();
  if (actions.size() != n || old_log_probs.size() != n || adv.size() != n) {
    throw ShapeError("surrogate_objective: batch length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(log_prob(spec, theta, states[i], actions[i]) - old_log_probs[i]);
    total += std::clamp(ratio, kRatioMin, kRatioMax) * adv[i];
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

SampledAction sample_action(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
                            std::mt19937_64& rng, bool deterministic) {
  check_theta(spec, theta);
  check_state(spec, state);
  const auto out = mlp_forward(spec.net, theta.span().subspan(0, spec.net_params()), state.span());
  const std::size_t d = spec.action_dim();
  Action action;
  if (spec.head == HeadKind::categorical) {
    const auto lp = log_softmax(std::span<const double>(out).subspan(0, d));
    std::size_t pick = 0;
    if (deterministic) {
      pick = static_cast<std::size_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      double acc = 0.0;
      pick = d - 1;
      for (std::size_t k = 0; k < d; ++k) {
        acc += std::exp(lp[k]);
        if (u < acc) {
          pick = k;
          break;
        }
      }
    }
    action = pick;
  } else {
    Vector a(d);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < d; ++k) {
      const double sigma = std::exp(clamp_log_std(theta[spec.net_params() + k]));
      a[k] = out[k] + (deterministic ? 0.0 : sigma * normal(rng));
    }
    action = std::move(a);
  }
  const double lp = eval_head(spec, theta, out, action).log_prob;
  return {std::move(action), lp};
}

std::vector<double> action_probabilities(const PolicySpec& spec, const ParamVector& theta,
                                         const Vector& state) {
  if (spec.head != HeadKind::categorical) throw ConfigError("action_probabilities: categorical only");
  check_theta(spec, theta);
  check_state(spec, state);
  const auto out = mlp_forward(spec.net, theta.span().subspan(0, spec.net_params()), state.span());
  auto lp = log_softmax(std::span<const double>(out).subspan(0, spec.action_dim()));
  for (double& v : lp) v = std::exp(v);
  return lp;
}

Vector squash(const Vector& action) {
  Vector out(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) out[i] = std::tanh(action[i]);
  return out;
}

}  // namespace rat
