#include "rat/env.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rat/random.hpp"

namespace rat {
namespace {

constexpr std::size_t kEnumerationLimit = 4096;

std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (u < acc) return k;
  }
  return probs.size() - 1;
}

// P_pi[s][s'] and r_pi[s].
std::pair<Matrix, Vector> policy_chain(const TabularMdp& mdp, const std::vector<std::vector<double>>& pi) {
  const std::size_t S = mdp.n_states, A = mdp.n_actions;
  Matrix p(S, S);
  Vector r(S);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      r[s] += pi[s][a] * mdp.r(s, a);
      for (std::size_t n = 0; n < S; ++n) p(s, n) += pi[s][a] * mdp.prob(s, a, n);
    }
  }
  return {std::move(p), std::move(r)};
}

std::vector<std::vector<double>> all_probs(const TabularMdp& mdp, const TabularPolicyModel& policy) {
  std::vector<std::vector<double>> pi(mdp.n_states);
  for (std::size_t s = 0; s < mdp.n_states; ++s) {
    pi[s] = policy.probs(s);
    if (pi[s].size() != mdp.n_actions) throw ShapeError("tabular policy: wrong number of actions");
  }
  return pi;
}

}  // namespace

void TabularMdp::validate() const {
  if (n_states == 0 || n_actions == 0) throw ConfigError("TabularMdp: empty state or action space");
  if (transition.size() != n_states * n_actions * n_states) throw ShapeError("TabularMdp: transition size");
  if (reward.size() != n_states * n_actions) throw ShapeError("TabularMdp: reward size");
  if (p0.size() != n_states) throw ShapeError("TabularMdp: p0 size");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("TabularMdp: gamma must lie in [0, 1)");
  for (std::size_t sa = 0; sa < n_states * n_actions; ++sa) {
    double total = 0.0;
    for (std::size_t n = 0; n < n_states; ++n) {
      const double v = transition[sa * n_states + n];
      if (v < 0.0) throw ConfigError("TabularMdp: negative transition probability");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("TabularMdp: transition row does not sum to 1");
  }
}

TabularMdp chain_mdp(std::size_t n_states, double gamma) {
  if (n_states < 2) throw ConfigError("chain_mdp: need at least two states");
  TabularMdp m;
  m.n_states = n_states;
  m.n_actions = 2;
  m.gamma = gamma;
  m.transition.assign(n_states * 2 * n_states, 0.0);
  m.reward.assign(n_states * 2, 0.0);
  m.p0.assign(n_states, 0.0);
  m.p0[0] = 1.0;
  for (std::size_t s = 0; s < n_states; ++s) {
    const std::size_t left = s == 0 ? 0 : s - 1;
    m.transition[(s * 2 + 0) * n_states + left] = 1.0;
    if (s + 1 < n_states) {
      m.transition[(s * 2 + 1) * n_states + s + 1] = 1.0;
    } else {
      m.transition[(s * 2 + 1) * n_states + 0] = 1.0;
      m.reward[s * 2 + 1] = 1.0;
    }
  }
  m.validate();
  return m;
}

Vector one_hot(std::size_t index, std::size_t n) {
  if (index >= n) throw ShapeError("one_hot: index out of range");
  Vector v(n);
  v[index] = 1.0;
  return v;
}

TabularPolicyModel tabular_model(const PolicySpec& spec, const ParamVector& theta) {
  if (spec.head != HeadKind::categorical) throw ConfigError("tabular_model: needs a categorical head");
  const std::size_t n = spec.obs_dim();
  return TabularPolicyModel{
      spec.num_params(),
      [spec, theta, n](std::size_t s) { return action_probabilities(spec, theta, one_hot(s, n)); },
      [spec, theta, n](std::size_t s, std::size_t a) { return score(spec, theta, one_hot(s, n), Action{a}); }};
}

Vector discounted_occupancy(const TabularMdp& mdp, const TabularPolicyModel& policy) {
  mdp.validate();
  const auto [p, r] = policy_chain(mdp, all_probs(mdp, policy));
  const std::size_t S = mdp.n_states;
  Matrix a(S, S);
  Vector rhs(S);
  for (std::size_t i = 0; i < S; ++i) {
    rhs[i] = (1.0 - mdp.gamma) * mdp.p0[i];
    for (std::size_t j = 0; j < S; ++j) a(i, j) = (i == j ? 1.0 : 0.0) - mdp.gamma * p(j, i);
  }
  return solve_general(a, rhs);
}

Vector stationary_distribution(const TabularMdp& mdp, const TabularPolicyModel& policy) {
  mdp.validate();
  const auto [p, r] = policy_chain(mdp, all_probs(mdp, policy));
  const std::size_t S = mdp.n_states;
  // (P^T - I) x = 0 with the last equation replaced by sum(x) = 1.
  Matrix a(S, S);
  Vector rhs(S);
  for (std::size_t i = 0; i + 1 < S; ++i)
    for (std::size_t j = 0; j < S; ++j) a(i, j) = p(j, i) - (i == j ? 1.0 : 0.0);
  for (std::size_t j = 0; j < S; ++j) a(S - 1, j) = 1.0;
  rhs[S - 1] = 1.0;
  return solve_general(a, rhs);
}

ExactQuantities exact_quantities(const TabularMdp& mdp, const TabularPolicyModel& policy, double lambda) {
  mdp.validate();
  const std::size_t S = mdp.n_states, A = mdp.n_actions, n = S * A;
  if (n > kEnumerationLimit) throw ConfigError("exact_quantities: state-action space too large to enumerate");
  if (lambda < 0.0) throw ConfigError("exact_quantities: damping must be nonnegative");
  const auto pi = all_probs(mdp, policy);
  const auto [p, r_pi] = policy_chain(mdp, pi);

  ExactQuantities out;
  out.lambda = lambda;
  out.d_pi = discounted_occupancy(mdp, policy);

  Matrix bellman = Matrix::identity(S);
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) bellman(i, j) -= mdp.gamma * p(i, j);
  out.v = solve_general(bellman, r_pi);
  out.objective = dot(Vector(mdp.p0), out.v);

  out.q = Vector(n);
  out.adv = Vector(n);
  out.sigma = Vector(n);
  out.h_full = Matrix(n, policy.num_params);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t i = s * A + a;
      double q = mdp.r(s, a);
      for (std::size_t nx = 0; nx < S; ++nx) q += mdp.gamma * mdp.prob(s, a, nx) * out.v[nx];
      out.q[i] = q;
      out.adv[i] = q - out.v[s];
      out.sigma[i] = out.d_pi[s] * pi[s][a];
      const Vector row = policy.score(s, a);
      if (row.size() != policy.num_params) throw ShapeError("exact_quantities: score length");
      std::copy(row.begin(), row.end(), out.h_full.row(i).begin());
    }
  }

  Vector weighted_adv(n);
  Matrix weighted_h = out.h_full;
  for (std::size_t i = 0; i < n; ++i) {
    weighted_adv[i] = out.sigma[i] * out.adv[i];
    for (auto& x : weighted_h.row(i)) x *= std::sqrt(out.sigma[i]);
  }
  out.pg = matvec_t(out.h_full, weighted_adv);
  out.fisher = cross_gram(weighted_h);

  const auto ev = symmetric_eigenvalues(out.fisher);
  const double scale = std::max(ev.back(), 1e-300);
  if (ev.front() > 1e-10 * scale) out.npg = solve_spd(out.fisher, out.pg);
  if (lambda == 0.0 && !out.npg) throw SingularityError("exact_quantities: Fisher singular with zero damping");
  Matrix damped = out.fisher;
  damped.add_diagonal(lambda);
  out.tnpg = solve_spd(damped, out.pg);
  return out;
}

ExactQuantities exact_quantities(const TabularMdp& mdp, const PolicySpec& spec, const ParamVector& theta,
                                 double lambda) {
  if (spec.obs_dim() != mdp.n_states || spec.action_dim() != mdp.n_actions) {
    throw ShapeError("exact_quantities: policy does not match the MDP");
  }
  return exact_quantities(mdp, tabular_model(spec, theta), lambda);
}

double expected_episode_return(const TabularMdp& mdp, const TabularPolicyModel& policy, std::size_t horizon) {
  mdp.validate();
  const auto [p, r] = policy_chain(mdp, all_probs(mdp, policy));
  Vector v(mdp.n_states);
  for (std::size_t k = 0; k < horizon; ++k) v = r + matvec(p, v);
  return dot(Vector(mdp.p0), v);
}

double optimal_episode_return(const TabularMdp& mdp, std::size_t horizon) {
  mdp.validate();
  Vector v(mdp.n_states);
  for (std::size_t k = 0; k < horizon; ++k) {
    Vector next(mdp.n_states);
    for (std::size_t s = 0; s < mdp.n_states; ++s) {
      double best = -INFINITY;
      for (std::size_t a = 0; a < mdp.n_actions; ++a) {
        double q = mdp.r(s, a);
        for (std::size_t n = 0; n < mdp.n_states; ++n) q += mdp.prob(s, a, n) * v[n];
        best = std::max(best, q);
      }
      next[s] = best;
    }
    v = std::move(next);
  }
  return dot(Vector(mdp.p0), v);
}

TabularEnv::TabularEnv(TabularMdp mdp, std::size_t episode_length)
    : mdp_(std::move(mdp)), episode_length_(episode_length) {
  mdp_.validate();
}

Vector TabularEnv::reset(std::mt19937_64& rng) {
  state_ = sample_categorical(mdp_.p0, rng);
  t_ = 0;
  return one_hot(state_, mdp_.n_states);
}

StepResult TabularEnv::step(const Action& action, std::mt19937_64& rng) {
  const auto* a = std::get_if<std::size_t>(&action);
  if (a == nullptr || *a >= mdp_.n_actions) throw ShapeError("TabularEnv: invalid action");
  const double reward = mdp_.r(state_, *a);
  const std::span<const double> row(mdp_.transition.data() + (state_ * mdp_.n_actions + *a) * mdp_.n_states,
                                    mdp_.n_states);
  state_ = sample_categorical(row, rng);
  ++t_;
  const bool done = episode_length_ > 0 && t_ >= episode_length_;
  return {one_hot(state_, mdp_.n_states), reward, done, false};
}

PointMassStep point_mass_step(const PointMassConfig& cfg, const PointMassState& state, const Vector& action) {
  if (action.size() != 2) throw ShapeError("point_mass_step: action must be 2-dimensional");
  PointMassStep out;
  out.state.t = state.t + 1;
  double dist2 = 0.0;
  for (std::size_t k = 0; k < 2; ++k) {
    const double force = std::tanh(action[k]);
    out.state.velocity[k] = cfg.damping * state.velocity[k] + cfg.dt * force;
    out.state.position[k] = state.position[k] + cfg.dt * out.state.velocity[k];
    const double d = out.state.position[k] - cfg.goal[k];
    dist2 += d * d;
  }
  out.reward = -std::sqrt(dist2);
  out.done = out.state.t >= cfg.step_limit;
  return out;
}

Vector PointMassEnv::observe() const {
  return Vector{state_.position[0] - cfg_.goal[0], state_.position[1] - cfg_.goal[1], state_.velocity[0],
                state_.velocity[1]};
}

Vector PointMassEnv::reset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-cfg_.start_range, cfg_.start_range);
  state_ = PointMassState{};
  state_.position[0] = u(rng);
  state_.position[1] = u(rng);
  return observe();
}

StepResult PointMassEnv::step(const Action& action, std::mt19937_64&) {
  const auto* a = std::get_if<Vector>(&action);
  if (a == nullptr) throw ShapeError("PointMassEnv: needs a continuous action");
  auto res = point_mass_step(cfg_, state_, *a);
  state_ = res.state;
  return {observe(), res.reward, res.done, false};
}

RolloutBatch collect_rollouts(const Environment& env, const PolicySpec& spec, const ParamVector& theta,
                              std::size_t n_steps, std::size_t n_envs, std::uint64_t seed,
                              const RolloutOptions& options) {
  if (n_envs == 0) throw ConfigError("collect_rollouts: need at least one environment");
  if (spec.obs_dim() != env.obs_dim()) throw ShapeError("collect_rollouts: policy/environment obs mismatch");
  std::vector<std::unique_ptr<Environment>> envs;
  std::vector<std::mt19937_64> rngs;
  std::vector<Vector> raw_obs;
  std::vector<double> running_return(n_envs, 0.0);
  for (std::size_t e = 0; e < n_envs; ++e) {
    envs.push_back(env.clone());
    rngs.emplace_back(stream_seed(seed, e));
    raw_obs.push_back(envs.back()->reset(rngs.back()));
  }
  const auto normalize = [&](const Vector& obs, bool update) {
    return options.obs_moments != nullptr ? obs_normalize(*options.obs_moments, obs, update) : obs;
  };
  const auto value_of = [&](const Vector& obs) { return options.value_fn ? options.value_fn(obs) : 0.0; };

  RolloutBatch batch;
  batch.n_steps = n_steps;
  batch.n_envs = n_envs;
  const std::size_t n = n_steps * n_envs;
  batch.states.reserve(n);
  batch.actions.reserve(n);
  for (std::size_t t = 0; t < n_steps; ++t) {
    for (std::size_t e = 0; e < n_envs; ++e) {
      Vector obs = normalize(raw_obs[e], true);
      auto sampled = sample_action(spec, theta, obs, rngs[e], options.deterministic);
      StepResult res = envs[e]->step(sampled.action, rngs[e]);
      running_return[e] += res.reward;
      batch.values.push_back(value_of(obs));
      batch.states.push_back(std::move(obs));
      batch.actions.push_back(std::move(sampled.action));
      batch.behavior_log_probs.push_back(sampled.log_prob);
      batch.rewards.push_back(res.reward);
      batch.dones.push_back(res.done ? 1 : 0);
      batch.terminals.push_back(res.terminal ? 1 : 0);
      double trunc = 0.0;
      if (res.done) {
        if (!res.terminal) trunc = value_of(normalize(res.obs, false));
        batch.episode_returns.push_back(running_return[e]);
        running_return[e] = 0.0;
        raw_obs[e] = envs[e]->reset(rngs[e]);
      } else {
        raw_obs[e] = std::move(res.obs);
      }
      batch.truncation_values.push_back(trunc);
    }
  }
  for (std::size_t e = 0; e < n_envs; ++e) batch.bootstrap_values.push_back(value_of(normalize(raw_obs[e], false)));
  return batch;
}

}  // namespace rat
