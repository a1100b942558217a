#pragma once

// Rollout post-processing: GAE, advantage and observation normalization, and
// PopArt value-target normalization.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rat/policy.hpp"
#include "rat/tensor.hpp"

namespace rat {

/// On-policy transitions laid out time-major: entry t * n_envs + e is step t
/// of environment e.
struct RolloutBatch {
  std::size_t n_steps = 0;
  std::size_t n_envs = 0;
  std::vector<Vector> states;
  std::vector<Action> actions;
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;      // an episode ended after this step
  std::vector<std::uint8_t> terminals;  // ...and it ended by termination, not a time limit
  std::vector<double> behavior_log_probs;
  std::vector<double> values;
  std::vector<double> truncation_values;  // V(final state) where done && !terminal
  std::vector<double> bootstrap_values;   // V(s_T) per environment
  std::vector<double> episode_returns;    // undiscounted returns of completed episodes

  std::size_t size() const { return states.size(); }
  void validate() const;
};

struct AdvantageResult {
  Vector advantages;
  Vector returns;  // advantages + values
};

inline constexpr double kDefaultGamma = 0.99;
inline constexpr double kDefaultGaeLambda = 0.95;

/// Backward GAE recursion. Episodes cut at dones; time-limit cuts bootstrap
/// from the truncation value.
AdvantageResult gae(const RolloutBatch& batch, double gamma = kDefaultGamma,
                    double gae_lambda = kDefaultGaeLambda);

/// Zero mean, unit (divide-by-N) standard deviation. If the input standard
/// deviation is below 1e-8 only the mean is removed.
Vector normalize_advantages(const Vector& adv);

/// Per-dimension running mean and population variance.
struct RunningMoments {
  Vector mean;
  Vector var;
  double count = 0.0;

  explicit RunningMoments(std::size_t dim = 1) : mean(dim, 0.0), var(dim, 1.0) {}

  void update(const Vector& x);
  void update_batch(std::span<const Vector> xs);
};

inline constexpr double kObsClip = 5.0;
inline constexpr double kObsEpsilon = 1e-8;

/// (obs - mean) / sqrt(var + 1e-8), clipped to [-5, 5]; moments are updated
/// first when `update` is set.
Vector obs_normalize(RunningMoments& moments, const Vector& obs, bool update);

inline constexpr double kPopArtDecay = 0.99999;
inline constexpr double kPopArtSigmaFloor = 1e-6;

struct PopArtState {
  double mu = 0.0;
  double sigma = 1.0;
  double decay = kPopArtDecay;
  std::uint64_t step = 0;
  // Decayed first/second moments before bias correction.
  double first = 0.0;
  double second = 0.0;

  double normalize(double target) const { return (target - mu) / sigma; }
  double denormalize(double normalized) const { return sigma * normalized + mu; }
};

/// The value output's final linear layer: v = weights . h + bias.
struct ValueLayer {
  std::vector<double> weights;
  double bias = 0.0;
};

/// Folds a batch of targets into the bias-corrected statistics and rewrites
/// the layer so sigma * v + mu is unchanged for every input.
std::pair<PopArtState, ValueLayer> popart_rescale(const PopArtState& state, const Vector& targets,
                                                  const ValueLayer& layer);

}  // namespace rat
