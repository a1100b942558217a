#pragma once

// The interleaved RAT training loop: per minibatch, transform advantages with
// a damped block-Kaczmarz step, backpropagate the ratio surrogate, clip and
// ascend.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rat/advantage.hpp"
#include "rat/kaczmarz.hpp"
#include "rat/policy.hpp"

namespace rat {

enum class SolverMode {
  interleaved,   // theta moves after every block
  fixed_policy,  // theta frozen; the running g is a plain Kaczmarz solve
};

enum class AdvantageSource {
  pre_normalized,  // y is the batch-normalized GAE advantage
  raw,
};

struct RatConfig {
  double lambda = 0.1;
  double lr = 0.05;          // policy (or shared network) learning rate
  double clip = 0.5;         // policy gradient-norm threshold
  double value_lr = 0.001;
  double value_clip = 5.0;
  std::size_t minibatch = 1024;
  std::size_t epochs_per_update = 8;
  SolverMode mode = SolverMode::interleaved;
  AdvantageSource advantage_source = AdvantageSource::pre_normalized;
  bool reset_g_per_rollout = true;
  bool transform = true;  // false: vanilla PG with the same pipeline
  bool clip_enabled = true;

  void validate() const;
};

/// Default learning rate of the shared-trunk network.
inline constexpr double kSharedLr = 0.1;

struct OptimizerState {
  ParamVector theta;
  ParamVector theta_old;
  Vector g;  // running Kaczmarz iterate
  std::uint64_t update_counter = 0;

  explicit OptimizerState(ParamVector initial);

  /// Snapshot theta as the behavior policy; resets g unless configured not to.
  void begin_rollout(const RatConfig& cfg);
};

/// alpha = min(eta, nu / ||g||); alpha = eta when g = 0.
double clip_gradient(const Vector& g, double lr, double threshold);

/// The policy-side samples of one rollout, with the RAT target y per sample.
struct PolicyBatch {
  std::span<const Vector> states;
  std::span<const Action> actions;
  std::span<const double> old_log_probs;
  Vector targets;
};

PolicyBatch make_policy_batch(const RolloutBatch& batch, const Vector& targets);

/// What one inner step did; one entry per minibatch.
struct StepRecord {
  std::size_t block = 0;
  double direction_norm = 0.0;  // ||d|| before scaling
  double alpha = 0.0;
  double step_norm = 0.0;       // ||theta_{t+1} - theta_t||
  double residual_norm = 0.0;   // ||y_tau - H_tau g|| in averaged units
};

/// theta += alpha * direction with alpha from clip_gradient (or plain lr when
/// clipping is off); fills the record and measures the actual step.
void apply_clipped_step(OptimizerState& state, const Vector& direction, double lr, double threshold,
                        bool clip_enabled, StepRecord& rec);

/// Processes the given blocks in order. This is the shared core of rat_epoch
/// and the fixed-policy solver; `g_trace`, when given, receives g after every block.
std::vector<StepRecord> rat_pass(OptimizerState& state, const PolicySpec& spec, const PolicyBatch& batch,
                                 const RatConfig& cfg, const BlockPartition& partition,
                                 std::span<const std::size_t> schedule, std::vector<Vector>* g_trace = nullptr);

/// One pass over a fresh random partition of the batch into minibatches of cfg.minibatch.
std::vector<StepRecord> rat_epoch(OptimizerState& state, const PolicySpec& spec, const PolicyBatch& batch,
                                  const RatConfig& cfg, std::mt19937_64& rng);

/// Same pipeline with the advantage passed through untransformed.
std::vector<StepRecord> vanilla_pg_epoch(OptimizerState& state, const PolicySpec& spec,
                                         const PolicyBatch& batch, const RatConfig& cfg, std::mt19937_64& rng);

/// Shared-trunk actor-critic batch: policy targets plus critic targets in the
/// network's (normalized) value units.
struct SharedBatch {
  PolicyBatch policy;
  Vector value_targets;
};

/// Joint RAT step for a shared network. Per minibatch the policy rows
/// (scores) and value rows ((v - V(s)) dV/dtheta) are stacked with targets
/// (y, 1) and transformed together; the transformed pseudo advantage weights
/// the value loss. Returns one record per minibatch.
std::vector<StepRecord> shared_ac_pass(OptimizerState& state, const PolicySpec& spec, const SharedBatch& batch,
                                       const RatConfig& cfg, const BlockPartition& partition,
                                       std::span<const std::size_t> schedule);

std::vector<StepRecord> shared_ac_epoch(OptimizerState& state, const PolicySpec& spec, const SharedBatch& batch,
                                        const RatConfig& cfg, std::mt19937_64& rng);

/// The parameter direction shared_ac_pass would take for one block at the
/// current state, without applying it. Exposed for oracle comparisons.
struct SharedDirection {
  Vector direction;
  Vector g_next;
  Vector transformed;  // stacked (policy advantage, pseudo advantage)
};

SharedDirection shared_ac_direction(const OptimizerState& state, const PolicySpec& spec, const SharedBatch& batch,
                                    const RatConfig& cfg, std::span<const std::size_t> rows);

}  // namespace rat
