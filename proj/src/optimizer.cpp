#include "rat/optimizer.hpp"

#include <cmath>
#include <numeric>

namespace rat {
namespace {

struct BlockView {
  std::vector<Vector> states;
  std::vector<Action> actions;
  std::vector<double> old_log_probs;
  Vector targets;
};

BlockView gather(const PolicyBatch& batch, std::span<const std::size_t> rows) {
  BlockView v;
  v.states.reserve(rows.size());
  v.actions.reserve(rows.size());
  for (auto i : rows) {
    v.states.push_back(batch.states[i]);
    v.actions.push_back(batch.actions[i]);
    v.old_log_probs.push_back(batch.old_log_probs[i]);
  }
  v.targets = select(batch.targets, rows);
  return v;
}

void check_batch(const PolicyBatch& batch) {
  const std::size_t n = batch.states.size();
  if (batch.actions.size() != n || batch.old_log_probs.size() != n || batch.targets.size() != n) {
    throw ShapeError("PolicyBatch: length mismatch");
  }
}

}  // namespace

void RatConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("RatConfig: lambda must be positive");
  if (!(lr > 0.0) || !(value_lr > 0.0)) throw ConfigError("RatConfig: learning rates must be positive");
  if (!(clip > 0.0) || !(value_clip > 0.0)) throw ConfigError("RatConfig: clip thresholds must be positive");
  if (minibatch == 0) throw ConfigError("RatConfig: minibatch must be at least 1");
  if (epochs_per_update == 0) throw ConfigError("RatConfig: epochs_per_update must be at least 1");
}

OptimizerState::OptimizerState(ParamVector initial)
    : theta(std::move(initial)), theta_old(theta), g(theta.size()) {}

void OptimizerState::begin_rollout(const RatConfig& cfg) {
  theta_old = theta;
  if (cfg.reset_g_per_rollout) g = Vector(theta.size());
  ++update_counter;
}

void apply_clipped_step(OptimizerState& state, const Vector& direction, double lr, double threshold,
                        bool clip_enabled, StepRecord& rec) {
  rec.direction_norm = norm(direction);
  rec.alpha = clip_enabled ? clip_gradient(direction, lr, threshold) : lr;
  const Vector before = state.theta;
  axpy(rec.alpha, direction.span(), state.theta.span());
  if (!state.theta.all_finite()) throw NonFiniteError("optimizer: parameters became non-finite");
  rec.step_norm = norm(state.theta - before);
}

double clip_gradient(const Vector& g, double lr, double threshold) {
  if (!(lr > 0.0) || !(threshold > 0.0)) throw ConfigError("clip_gradient: eta and nu must be positive");
  const double n = norm(g);
  if (n == 0.0) return lr;
  return std::min(lr, threshold / n);
}

PolicyBatch make_policy_batch(const RolloutBatch& batch, const Vector& targets) {
  if (targets.size() != batch.size()) throw ShapeError("make_policy_batch: target length");
  return PolicyBatch{batch.states, batch.actions, batch.behavior_log_probs, targets};
}

std::vector<StepRecord> rat_pass(OptimizerState& state, const PolicySpec& spec, const PolicyBatch& batch,
                                 const RatConfig& cfg, const BlockPartition& partition,
                                 std::span<const std::size_t> schedule, std::vector<Vector>* g_trace) {
  cfg.validate();
  check_batch(batch);
  partition.validate(batch.states.size());
  std::vector<StepRecord> records;
  records.reserve(schedule.size());
  for (auto b : schedule) {
    const auto& rows = partition.blocks.at(b);
    const BlockView view = gather(batch, rows);
    StepRecord rec;
    rec.block = b;

    Vector adv = view.targets;
    if (cfg.transform) {
      // Rows and targets carry a 1/sqrt(B) factor so the Gram matrix is a
      // minibatch average; the per-sample advantage is rescaled back.
      const double c = 1.0 / std::sqrt(static_cast<double>(rows.size()));
      Matrix h = per_sample_scores(spec, state.theta, view.states, view.actions);
      h *= c;
      const Vector y = c * view.targets;
      rec.residual_norm = norm(y - matvec(h, state.g));
      auto step = rat_block_step(state.g, h, y, cfg.lambda);
      state.g = std::move(step.g_next);
      adv = (1.0 / c) * std::move(step.transformed);
    }
    if (g_trace != nullptr) g_trace->push_back(state.g);

    if (cfg.mode == SolverMode::interleaved) {
      const Vector d = surrogate_gradient(spec, state.theta, view.old_log_probs, view.states, view.actions, adv);
      apply_clipped_step(state, d, cfg.lr, cfg.clip, cfg.clip_enabled, rec);
    }
    records.push_back(rec);
  }
  return records;
}

std::vector<StepRecord> rat_epoch(OptimizerState& state, const PolicySpec& spec, const PolicyBatch& batch,
                                  const RatConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto partition = random_partition(batch.states.size(), cfg.minibatch, rng);
  std::vector<std::size_t> schedule(partition.size());
  std::iota(schedule.begin(), schedule.end(), 0);
  return rat_pass(state, spec, batch, cfg, partition, schedule);
}

std::vector<StepRecord> vanilla_pg_epoch(OptimizerState& state, const PolicySpec& spec, const PolicyBatch& batch,
                                         const RatConfig& cfg, std::mt19937_64& rng) {
  RatConfig plain = cfg;
  plain.transform = false;
  return rat_epoch(state, spec, batch, plain, rng);
}

SharedDirection shared_ac_direction(const OptimizerState& state, const PolicySpec& spec, const SharedBatch& batch,
                                    const RatConfig& cfg, std::span<const std::size_t> rows) {
  if (!spec.value_head) throw ConfigError("shared_ac: policy has no value head");
  const BlockView view = gather(batch.policy, rows);
  const std::size_t b = rows.size();
  const double c = 1.0 / std::sqrt(static_cast<double>(b));

  Vector residual(b);
  for (std::size_t i = 0; i < b; ++i) {
    residual[i] = batch.value_targets[rows[i]] - value(spec, state.theta, view.states[i]);
  }
  Matrix policy_rows = per_sample_scores(spec, state.theta, view.states, view.actions);
  Matrix value_rows = value_scores(spec, state.theta, view.states, residual);

  SharedDirection out;
  if (cfg.transform) {
    Matrix stacked = vstack(policy_rows, value_rows);
    stacked *= c;
    Vector y(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
      y[i] = c * view.targets[i];
      y[b + i] = c;  // all-ones pseudo advantage
    }
    auto step = rat_block_step(state.g, stacked, y, cfg.lambda);
    out.g_next = std::move(step.g_next);
    out.transformed = (1.0 / c) * std::move(step.transformed);
  } else {
    out.g_next = state.g;
    out.transformed = Vector(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
      out.transformed[i] = view.targets[i];
      out.transformed[b + i] = 1.0;
    }
  }

  Vector adv(b), weight(b);
  for (std::size_t i = 0; i < b; ++i) {
    adv[i] = out.transformed[i];
    weight[i] = out.transformed[b + i];
  }
  // Ascent direction of E[ratio * A~] - E[w~ (v - V)^2 / 2].
  out.direction = surrogate_gradient(spec, state.theta, view.old_log_probs, view.states, view.actions, adv);
  axpy(1.0 / static_cast<double>(b), matvec_t(value_rows, weight).span(), out.direction.span());
  return out;
}

std::vector<StepRecord> shared_ac_pass(OptimizerState& state, const PolicySpec& spec, const SharedBatch& batch,
                                       const RatConfig& cfg, const BlockPartition& partition,
                                       std::span<const std::size_t> schedule) {
  cfg.validate();
  check_batch(batch.policy);
  if (batch.value_targets.size() != batch.policy.states.size()) throw ShapeError("SharedBatch: value targets length");
  partition.validate(batch.policy.states.size());
  std::vector<StepRecord> records;
  records.reserve(schedule.size());
  for (auto b : schedule) {
    StepRecord rec;
    rec.block = b;
    auto dir = shared_ac_direction(state, spec, batch, cfg, partition.blocks.at(b));
    state.g = std::move(dir.g_next);
    if (cfg.mode == SolverMode::interleaved) apply_clipped_step(state, dir.direction, cfg.lr, cfg.clip, cfg.clip_enabled, rec);
    records.push_back(rec);
  }
  return records;
}

std::vector<StepRecord> shared_ac_epoch(OptimizerState& state, const PolicySpec& spec, const SharedBatch& batch,
                                        const RatConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const auto partition = random_partition(batch.policy.states.size(), cfg.minibatch, rng);
  std::vector<std::size_t> schedule(partition.size());
  std::iota(schedule.begin(), schedule.end(), 0);
  return shared_ac_pass(state, spec, batch, cfg, partition, schedule);
}

}  // namespace rat
