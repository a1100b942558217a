#include "rat/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rat {

void RolloutBatch::validate() const {
  const std::size_t n = n_steps * n_envs;
  const auto check = [n](std::size_t got, const char* what) {
    if (got != n) {
      throw ShapeError(std::string("RolloutBatch: ") + what + " has " + std::to_string(got) +
                       " entries, expected " + std::to_string(n));
    }
  };
  check(states.size(), "states");
  check(actions.size(), "actions");
  check(rewards.size(), "rewards");
  check(dones.size(), "dones");
  check(terminals.size(), "terminals");
  check(behavior_log_probs.size(), "behavior_log_probs");
  check(values.size(), "values");
  check(truncation_values.size(), "truncation_values");
  if (bootstrap_values.size() != n_envs) throw ShapeError("RolloutBatch: bootstrap_values length");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NonFiniteError("RolloutBatch: non-finite reward");
  }
}

AdvantageResult gae(const RolloutBatch& batch, double gamma, double gae_lambda) {
  batch.validate();
  const std::size_t T = batch.n_steps, E = batch.n_envs;
  Vector adv(T * E), ret(T * E);
  for (std::size_t e = 0; e < E; ++e) {
    double next_adv = 0.0;
    double next_value = batch.bootstrap_values[e];
    for (std::size_t t = T; t-- > 0;) {
      const std::size_t i = t * E + e;
      double v_next = next_value;
      double carry = next_adv;
      if (batch.dones[i]) {
        v_next = batch.terminals[i] ? 0.0 : batch.truncation_values[i];
        carry = 0.0;
      }
      const double delta = batch.rewards[i] + gamma * v_next - batch.values[i];
      adv[i] = delta + gamma * gae_lambda * carry;
      ret[i] = adv[i] + batch.values[i];
      next_adv = adv[i];
      next_value = batch.values[i];
    }
  }
  return {std::move(adv), std::move(ret)};
}

Vector normalize_advantages(const Vector& adv) {
  const std::size_t n = adv.size();
  if (n < 2) throw ShapeError("normalize_advantages: need at least two entries");
  double mean = 0.0;
  for (double a : adv) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  Vector out(n);
  const double scale = sd < 1e-8 ? 1.0 : 1.0 / sd;
  for (std::size_t i = 0; i < n; ++i) out[i] = (adv[i] - mean) * scale;
  return out;
}

void RunningMoments::update(const Vector& x) { update_batch(std::span<const Vector>(&x, 1)); }

void RunningMoments::update_batch(std::span<const Vector> xs) {
  if (xs.empty()) return;
  const std::size_t d = mean.size();
  const double nb = static_cast<double>(xs.size());
  Vector bm(d), bv(d);
  for (const auto& x : xs) {
    if (x.size() != d) throw ShapeError("RunningMoments: dimension mismatch");
    bm += x;
  }
  bm *= 1.0 / nb;
  for (const auto& x : xs)
    for (std::size_t k = 0; k < d; ++k) bv[k] += (x[k] - bm[k]) * (x[k] - bm[k]);
  bv *= 1.0 / nb;
  if (count == 0.0) {
    mean = bm;
    var = bv;
    count = nb;
    return;
  }
  // Chan et al. pairwise combination.
  const double total = count + nb;
  for (std::size_t k = 0; k < d; ++k) {
    const double delta = bm[k] - mean[k];
    const double m2 = var[k] * count + bv[k] * nb + delta * delta * count * nb / total;
    mean[k] += delta * nb / total;
    var[k] = m2 / total;
  }
  count = total;
}

Vector obs_normalize(RunningMoments& moments, const Vector& obs, bool update) {
  if (obs.size() != moments.mean.size()) throw ShapeError("obs_normalize: dimension mismatch");
  if (update) moments.update(obs);
  Vector out(obs.size());
  for (std::size_t k = 0; k < obs.size(); ++k) {
    const double z = (obs[k] - moments.mean[k]) / std::sqrt(moments.var[k] + kObsEpsilon);
    out[k] = std::clamp(z, -kObsClip, kObsClip);
  }
  return out;
}

std::pair<PopArtState, ValueLayer> popart_rescale(const PopArtState& state, const Vector& targets,
                                                  const ValueLayer& layer) {
  if (targets.empty()) return {state, layer};
  double m1 = 0.0, m2 = 0.0;
  for (double t : targets) {
    m1 += t;
    m2 += t * t;
  }
  m1 /= static_cast<double>(targets.size());
  m2 /= static_cast<double>(targets.size());

  PopArtState next = state;
  next.step = state.step + 1;
  next.first = state.decay * state.first + (1.0 - state.decay) * m1;
  next.second = state.decay * state.second + (1.0 - state.decay) * m2;
  const double correction = 1.0 - std::pow(state.decay, static_cast<double>(next.step));
  next.mu = next.first / correction;
  const double second = next.second / correction;
  next.sigma = std::sqrt(std::max(second - next.mu * next.mu, kPopArtSigmaFloor * kPopArtSigmaFloor));

  ValueLayer out = layer;
  const double ratio = state.sigma / next.sigma;
  for (double& w : out.weights) w *= ratio;
  out.bias = (state.sigma * layer.bias + state.mu - next.mu) / next.sigma;
  return {next, out};
}

}  // namespace rat
