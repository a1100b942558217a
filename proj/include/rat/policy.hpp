#pragma once

// Small MLP policies and critics with exact per-sample score gradients.
//
// Parameters are one flat vector. Layer l contributes a row-major weight
// block (out x in) followed by its bias. A Gaussian head appends one
// state-independent log standard deviation per action dimension.

#include <cstdint>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "rat/tensor.hpp"

namespace rat {

using ParamVector = Vector;
/// Row i is the gradient of log pi(a_i | s_i) with respect to the parameters.
using ScoreMatrix = Matrix;

enum class Activation { tanh, relu };

struct MlpSpec {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  Activation activation = Activation::tanh;

  void validate() const;
  std::size_t num_params() const;
  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
};

/// Activations kept from a forward pass for the backward pass.
struct MlpCache {
  std::vector<std::vector<double>> inputs;  // input to each layer
  std::vector<std::vector<double>> pre;     // pre-activation of each hidden layer
};

std::vector<double> mlp_forward(const MlpSpec& spec, std::span<const double> params,
                                std::span<const double> input, MlpCache* cache = nullptr);

/// Accumulates d(output . out_grad)/d(params) into `grad`.
void mlp_backward(const MlpSpec& spec, std::span<const double> params, const MlpCache& cache,
                  std::span<const double> out_grad, std::span<double> grad);

/// Normal(0, 1/fan_in) weights, zero biases; the last layer is scaled by `out_scale`.
std::vector<double> mlp_init(const MlpSpec& spec, std::mt19937_64& rng, double out_scale = 0.01);

enum class HeadKind { gaussian, categorical };

inline constexpr double kLogStdMin = -10.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicySpec {
  MlpSpec net;
  HeadKind head = HeadKind::categorical;
  /// When set, the last network output is the value estimate V(s) and the
  /// hidden layers form a trunk shared by actor and critic.
  bool value_head = false;

  void validate() const;
  /// Gaussian: action dimension. Categorical: number of actions.
  std::size_t action_dim() const;
  std::size_t net_params() const { return net.num_params(); }
  std::size_t num_params() const;
  std::size_t obs_dim() const { return net.input_dim(); }
};

/// Discrete actions are indices, continuous actions are pre-squash vectors.
using Action = std::variant<std::size_t, Vector>;

ParamVector init_policy_params(const PolicySpec& spec, std::mt19937_64& rng,
                               double initial_log_std = 0.0);

double log_prob(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
                const Action& action);

/// Gradient of log_prob with respect to theta.
Vector score(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
             const Action& action);

ScoreMatrix per_sample_scores(const PolicySpec& spec, const ParamVector& theta,
                              std::span<const Vector> states, std::span<const Action> actions);

/// V(s) from the value output. Throws ConfigError without a value head.
double value(const PolicySpec& spec, const ParamVector& theta, const Vector& state);

/// Rows residual_i * dV(s_i)/dtheta: the score of a unit-variance Gaussian
/// value likelihood log p(v|s) = -(v - V(s))^2 / 2 at v = V(s) + residual_i.
Matrix value_scores(const PolicySpec& spec, const ParamVector& theta,
                    std::span<const Vector> states, const Vector& residuals);

/// Rows: policy score + value-likelihood score with v_i = V(s_i) + value_noise_i.
ScoreMatrix joint_scores_shared_ac(const PolicySpec& spec, const ParamVector& theta,
                                   std::span<const Vector> states,
                                   std::span<const Action> actions, const Vector& value_noise);

inline constexpr double kRatioMin = 0.1;
inline constexpr double kRatioMax = 10.0;

/// Gradient of mean_i clamp(pi(a_i|s_i)/pi_old(a_i|s_i), 0.1, 10) * adv_i.
/// Samples whose ratio is clamped contribute nothing.
Vector surrogate_gradient(const PolicySpec& spec, const ParamVector& theta,
                          std::span<const double> old_log_probs, std::span<const Vector> states,
                          std::span<const Action> actions, const Vector& adv);

Vector surrogate_gradient(const PolicySpec& spec, const ParamVector& theta,
                          const ParamVector& theta_old, std::span<const Vector> states,
                          std::span<const Action> actions, const Vector& adv);

/// The clamped surrogate objective itself.
double surrogate_objective(const PolicySpec& spec, const ParamVector& theta,
                           std::span<const double> old_log_probs, std::span<const Vector> states,
                           std::span<const Action> actions, const Vector& adv);

struct SampledAction {
  Action action;
  double log_prob;
};

/// Draws an action; with `deterministic` returns the mode (argmax / mean).
SampledAction sample_action(const PolicySpec& spec, const ParamVector& theta, const Vector& state,
                            std::mt19937_64& rng, bool deterministic = false);

/// Action probabilities of a categorical head.
std::vector<double> action_probabilities(const PolicySpec& spec, const ParamVector& theta,
                                         const Vector& state);

/// Squashes a pre-squash continuous action into (-1, 1).
Vector squash(const Vector& action);

}  // namespace rat
