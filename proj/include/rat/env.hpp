#pragma once

// Desk-scale environments: tabular MDPs with exact enumeration oracles and a
// 2-D point mass with tanh-squashed force.

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "rat/advantage.hpp"
#include "rat/policy.hpp"
#include "rat/tensor.hpp"

namespace rat {

struct TabularMdp {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> transition;  // [s][a][s'] row-major
  std::vector<double> reward;      // [s][a]
  std::vector<double> p0;
  double gamma = 0.99;

  void validate() const;
  double prob(std::size_t s, std::size_t a, std::size_t next) const {
    return transition[(s * n_actions + a) * n_states + next];
  }
  double r(std::size_t s, std::size_t a) const { return reward[s * n_actions + a]; }
};

/// Chain of `n_states` states with actions {left, right}. The episode starts
/// at state 0; "right" at the last state pays 1 and returns to state 0.
/// "left" at state 0 stays put.
TabularMdp chain_mdp(std::size_t n_states = 5, double gamma = 0.99);

Vector one_hot(std::size_t index, std::size_t n);

/// Per-state action distributions and scores of a policy over a tabular MDP.
/// Adapts any parameterization to the enumeration oracles.
struct TabularPolicyModel {
  std::size_t num_params = 0;
  std::function<std::vector<double>(std::size_t state)> probs;
  std::function<Vector(std::size_t state, std::size_t action)> score;
};

/// A PolicySpec with a categorical head reading one-hot states.
TabularPolicyModel tabular_model(const PolicySpec& spec, const ParamVector& theta);

struct ExactQuantities {
  Vector d_pi;   // discounted state distribution
  Vector q;      // [s][a]
  Vector v;
  Vector adv;    // [s][a]
  Vector sigma;  // d_pi(s) pi(a|s), [s][a]
  Matrix h_full; // rows ordered [s][a]
  Matrix fisher; // H^T Sigma H
  Vector pg;     // H^T Sigma adv
  std::optional<Vector> npg;  // F^{-1} pg when F is invertible
  Vector tnpg;   // (lambda I + F)^{-1} pg
  double lambda = 0.1;
  double objective = 0.0;  // p0^T v
};

/// Enumerates every (s, a). Throws SingularityError when lambda = 0 and the
/// Fisher matrix is singular.
ExactQuantities exact_quantities(const TabularMdp& mdp, const TabularPolicyModel& policy,
                                 double lambda = 0.1);
ExactQuantities exact_quantities(const TabularMdp& mdp, const PolicySpec& spec,
                                 const ParamVector& theta, double lambda = 0.1);

/// Discounted occupancy: solves (I - gamma P_pi)^T x = (1 - gamma) p0.
Vector discounted_occupancy(const TabularMdp& mdp, const TabularPolicyModel& policy);

/// Stationary distribution of the state chain under the policy.
Vector stationary_distribution(const TabularMdp& mdp, const TabularPolicyModel& policy);

/// Expected undiscounted return over `horizon` steps from p0.
double expected_episode_return(const TabularMdp& mdp, const TabularPolicyModel& policy,
                               std::size_t horizon);

/// Best achievable undiscounted `horizon`-step return (finite-horizon value iteration).
double optimal_episode_return(const TabularMdp& mdp, std::size_t horizon);

struct StepResult {
  Vector obs;
  double reward = 0.0;
  bool done = false;
  bool terminal = false;  // done by termination rather than a time limit
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::unique_ptr<Environment> clone() const = 0;
  virtual std::size_t obs_dim() const = 0;
  virtual Vector reset(std::mt19937_64& rng) = 0;
  virtual StepResult step(const Action& action, std::mt19937_64& rng) = 0;
};

/// A TabularMdp as an episodic environment with one-hot observations. Episodes
/// are cut after `episode_length` steps (0 means never).
class TabularEnv final : public Environment {
 public:
  TabularEnv(TabularMdp mdp, std::size_t episode_length);

  std::unique_ptr<Environment> clone() const override { return std::make_unique<TabularEnv>(*this); }
  std::size_t obs_dim() const override { return mdp_.n_states; }
  Vector reset(std::mt19937_64& rng) override;
  StepResult step(const Action& action, std::mt19937_64& rng) override;

  const TabularMdp& mdp() const { return mdp_; }
  std::size_t state() const { return state_; }

 private:
  TabularMdp mdp_;
  std::size_t episode_length_;
  std::size_t state_ = 0;
  std::size_t t_ = 0;
};

struct PointMassConfig {
  double dt = 0.05;
  double damping = 0.95;
  std::array<double, 2> goal{0.0, 0.0};
  std::size_t step_limit = 100;
  double start_range = 1.0;  // initial position uniform in [-r, r]^2
};

struct PointMassState {
  std::array<double, 2> position{0.0, 0.0};
  std::array<double, 2> velocity{0.0, 0.0};
  std::size_t t = 0;
};

struct PointMassStep {
  PointMassState state;
  double reward = 0.0;
  bool done = false;
};

/// Semi-implicit Euler: v' = damping * v + dt * tanh(action), p' = p + dt * v'.
/// Reward is -||p' - goal||; done once `step_limit` steps have been taken.
PointMassStep point_mass_step(const PointMassConfig& cfg, const PointMassState& state,
                              const Vector& action);

/// Observation (position - goal, velocity).
class PointMassEnv final : public Environment {
 public:
  explicit PointMassEnv(PointMassConfig cfg = {}) : cfg_(cfg) {}

  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMassEnv>(*this); }
  std::size_t obs_dim() const override { return 4; }
  Vector reset(std::mt19937_64& rng) override;
  StepResult step(const Action& action, std::mt19937_64& rng) override;

  const PointMassState& state() const { return state_; }
  const PointMassConfig& config() const { return cfg_; }

 private:
  Vector observe() const;

  PointMassConfig cfg_;
  PointMassState state_;
};

struct RolloutOptions {
  /// Critic evaluated on (normalized) observations; zeros when empty.
  std::function<double(const Vector&)> value_fn;
  /// When set, observations are normalized and the moments updated as they arrive.
  RunningMoments* obs_moments = nullptr;
  bool deterministic = false;
};

/// Runs `n_envs` copies of `env` for `n_steps` steps each. Copy e draws from
/// stream stream_seed(seed, e), so the batch depends only on the seed.
RolloutBatch collect_rollouts(const Environment& env, const PolicySpec& spec, const ParamVector& theta,
                              std::size_t n_steps, std::size_t n_envs, std::uint64_t seed,
                              const RolloutOptions& options = {});

}  // namespace rat
