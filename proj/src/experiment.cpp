#include "rat/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>

#include "rat/env.hpp"
#include "rat/random.hpp"

namespace rat {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<std::size_t> uint_list(const Json& j) {
  std::vector<std::size_t> out;
  for (const auto& x : j) out.push_back(x.get<std::size_t>());
  return out;
}

// The critic of the separate actor-critic setup: an MLP trained with Adam on
// PopArt-normalized returns.
struct Critic {
  MlpSpec spec;
  std::vector<double> params;
  std::vector<double> m, v;
  std::uint64_t t = 0;
  PopArtState popart;
};

double critic_value(const Critic& c, bool popart, const Vector& obs) {
  const double out = mlp_forward(c.spec, c.params, obs.span())[0];
  return popart ? c.popart.denormalize(out) : out;
}

// Offsets of the value output's row and bias inside the last layer.
struct ValueRowLayout {
  std::size_t weights = 0;
  std::size_t bias = 0;
  std::size_t width = 0;
};

ValueRowLayout value_row_layout(const MlpSpec& net) {
  const std::size_t out = net.layer_sizes.back();
  const std::size_t in = net.layer_sizes[net.layer_sizes.size() - 2];
  const std::size_t start = net.num_params() - (out * in + out);
  return {start + (out - 1) * in, start + out * in + (out - 1), in};
}

ValueLayer read_value_layer(const MlpSpec& net, std::span<const double> params) {
  const auto l = value_row_layout(net);
  return {std::vector<double>(params.begin() + static_cast<std::ptrdiff_t>(l.weights),
                              params.begin() + static_cast<std::ptrdiff_t>(l.weights + l.width)),
          params[l.bias]};
}

void write_value_layer(const MlpSpec& net, std::span<double> params, const ValueLayer& layer) {
  const auto l = value_row_layout(net);
  std::copy(layer.weights.begin(), layer.weights.end(), params.begin() + static_cast<std::ptrdiff_t>(l.weights));
  params[l.bias] = layer.bias;
}

void train_critic(Critic& c, const TrainSettings& s, std::span<const Vector> states, const Vector& targets,
                  std::mt19937_64& rng) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const std::size_t n = states.size();
  std::vector<double> grad(c.params.size());
  for (std::size_t epoch = 0; epoch < s.rat.epochs_per_update; ++epoch) {
    const auto partition = random_partition(n, std::min(s.rat.minibatch, n), rng);
    for (const auto& rows : partition.blocks) {
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv_b = 1.0 / static_cast<double>(rows.size());
      for (auto i : rows) {
        MlpCache cache;
        const double out = mlp_forward(c.spec, c.params, states[i].span(), &cache)[0];
        const double og = (out - targets[i]) * inv_b;
        mlp_backward(c.spec, c.params, cache, std::span<const double>(&og, 1), grad);
      }
      const double gn = norm(std::span<const double>(grad));
      const double scale = gn > s.rat.value_clip ? s.rat.value_clip / gn : 1.0;
      ++c.t;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(c.t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(c.t));
      for (std::size_t k = 0; k < grad.size(); ++k) {
        const double gk = grad[k] * scale;
        c.m[k] = kBeta1 * c.m[k] + (1.0 - kBeta1) * gk;
        c.v[k] = kBeta2 * c.v[k] + (1.0 - kBeta2) * gk * gk;
        c.params[k] -= s.rat.value_lr * (c.m[k] / bc1) / (std::sqrt(c.v[k] / bc2) + kEps);
      }
    }
  }
}

struct Rows {
  std::vector<Vector> states;
  std::vector<Action> actions;
  std::vector<double> old_log_probs;
  Vector targets;
};

Rows gather_rows(const PolicyBatch& b, std::span<const std::size_t> idx) {
  Rows r;
  for (auto i : idx) {
    r.states.push_back(b.states[i]);
    r.actions.push_back(b.actions[i]);
    r.old_log_probs.push_back(b.old_log_probs[i]);
  }
  r.targets = select(b.targets, idx);
  return r;
}

struct InnerPass {
  BlockPartition partition;
  std::vector<std::size_t> schedule;
};

std::vector<InnerPass> plan_inner(const TrainSettings& s, std::size_t n, std::mt19937_64& rng) {
  std::vector<InnerPass> passes;
  if (s.kaczmarz_iters == 0) {
    for (std::size_t e = 0; e < s.rat.epochs_per_update; ++e) {
      InnerPass p{random_partition(n, s.rat.minibatch, rng), {}};
      p.schedule.resize(p.partition.size());
      std::iota(p.schedule.begin(), p.schedule.end(), 0);
      passes.push_back(std::move(p));
    }
  } else {
    InnerPass p{random_partition(n, s.rat.minibatch, rng), {}};
    p.schedule = block_schedule(p.partition, s.kaczmarz_iters, rng());
    passes.push_back(std::move(p));
  }
  return passes;
}

std::unique_ptr<Environment> make_env(const TrainSettings& s) {
  if (s.env == EnvKind::chain) return std::make_unique<TabularEnv>(chain_mdp(s.chain_states, s.gamma), s.episode_length);
  PointMassConfig pm;
  pm.step_limit = s.step_limit;
  return std::make_unique<PointMassEnv>(pm);
}

}  // namespace

TrainSettings TrainSettings::from_config(const Json& c) {
  TrainSettings s;
  s.env = c.at("env").get<std::string>() == "chain" ? EnvKind::chain : EnvKind::point_mass;
  const auto m = c.at("method").get<std::string>();
  s.method = m == "rat" ? Method::rat : m == "vanilla_pg" ? Method::vanilla_pg : m == "exact_tnpg" ? Method::exact_tnpg
                                                                                                     : Method::cg_fvp;
  s.shared_ac = c.at("shared_ac").get<bool>();
  s.updates = c.at("updates").get<std::size_t>();
  s.rollout_steps = c.at("rollout_steps").get<std::size_t>();
  s.n_envs = c.at("n_envs").get<std::size_t>();
  s.chain_states = c.at("chain_states").get<std::size_t>();
  s.episode_length = c.at("episode_length").get<std::size_t>();
  s.step_limit = c.at("step_limit").get<std::size_t>();
  s.hidden = uint_list(c.at("hidden"));
  s.critic_hidden = uint_list(c.at("critic_hidden"));
  s.activation = c.at("activation").get<std::string>() == "relu" ? Activation::relu : Activation::tanh;
  s.initial_log_std = c.at("initial_log_std").get<double>();
  s.rat.lambda = c.at("lambda").get<double>();
  s.rat.lr = c.at("lr").get<double>();
  s.rat.clip = c.at("clip").get<double>();
  s.rat.value_lr = c.at("value_lr").get<double>();
  s.rat.value_clip = c.at("value_clip").get<double>();
  s.rat.minibatch = c.at("minibatch").get<std::size_t>();
  s.rat.epochs_per_update = c.at("epochs_per_update").get<std::size_t>();
  s.rat.mode = c.at("mode").get<std::string>() == "interleaved" ? SolverMode::interleaved : SolverMode::fixed_policy;
  s.rat.advantage_source =
      c.at("advantage_source").get<std::string>() == "raw" ? AdvantageSource::raw : AdvantageSource::pre_normalized;
  s.rat.reset_g_per_rollout = c.at("reset_g_per_rollout").get<bool>();
  s.rat.transform = c.at("transform").get<bool>();
  s.rat.clip_enabled = c.at("clip_enabled").get<bool>();
  s.kaczmarz_iters = c.at("kaczmarz_iters").get<std::size_t>();
  s.gamma = c.at("gamma").get<double>();
  s.gae_lambda = c.at("gae_lambda").get<double>();
  s.normalize_obs = c.at("normalize_obs").get<bool>();
  s.popart = c.at("popart").get<bool>();
  s.cg_iters = c.at("cg_iters").get<std::size_t>();
  s.eval_episodes = c.at("eval_episodes").get<std::size_t>();
  s.record_wall_time = c.at("record_wall_time").get<bool>();
  s.validate();
  return s;
}

void TrainSettings::validate() const {
  rat.validate();
  if (updates == 0) throw ConfigError("updates must be at least 1");
  if (rollout_steps == 0 || n_envs == 0) throw ConfigError("rollout_steps and n_envs must be at least 1");
  if (rat.minibatch > rollout_steps * n_envs) {
    throw ConfigError("minibatch exceeds the rollout size rollout_steps * n_envs");
  }
  if (env == EnvKind::chain && chain_states < 2) throw ConfigError("chain_states must be at least 2");
  if (env == EnvKind::point_mass && step_limit == 0) throw ConfigError("step_limit must be at least 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must lie in [0, 1]");
  if (initial_log_std < kLogStdMin || initial_log_std > kLogStdMax) {
    throw ConfigError("initial_log_std must lie in [-10, 2]");
  }
  for (auto w : hidden) {
    if (w == 0) throw ConfigError("hidden widths must be at least 1");
  }
  for (auto w : critic_hidden) {
    if (w == 0) throw ConfigError("critic_hidden widths must be at least 1");
  }
  if (shared_ac && hidden.empty()) throw ConfigError("shared_ac needs at least one hidden layer");
  if (shared_ac && (method == Method::exact_tnpg || method == Method::cg_fvp)) {
    throw ConfigError("shared_ac supports methods rat and vanilla_pg only");
  }
  if (method == Method::cg_fvp && cg_iters == 0) throw ConfigError("cg_iters must be at least 1");
  if (env == EnvKind::point_mass && eval_episodes == 0) throw ConfigError("eval_episodes must be at least 1");
}

PolicySpec TrainSettings::policy_spec() const {
  PolicySpec spec;
  const std::size_t obs = env == EnvKind::chain ? chain_states : 4;
  const std::size_t act = 2;  // chain: left/right; point mass: 2-D force
  spec.net.layer_sizes.push_back(obs);
  for (auto w : hidden) spec.net.layer_sizes.push_back(w);
  spec.net.layer_sizes.push_back(act + (shared_ac ? 1 : 0));
  spec.net.activation = activation;
  spec.head = env == EnvKind::chain ? HeadKind::categorical : HeadKind::gaussian;
  spec.value_head = shared_ac;
  spec.validate();
  return spec;
}

double evaluate_policy(const TrainSettings& s, const PolicySpec& spec, const ParamVector& theta,
                       const RunningMoments* obs_moments, std::uint64_t seed) {
  if (s.env == EnvKind::chain) {
    return expected_episode_return(chain_mdp(s.chain_states, s.gamma), tabular_model(spec, theta), s.episode_length);
  }
  const auto proto = make_env(s);
  RunningMoments frozen = obs_moments != nullptr ? *obs_moments : RunningMoments(proto->obs_dim());
  double total = 0.0;
  for (std::size_t ep = 0; ep < s.eval_episodes; ++ep) {
    auto env = proto->clone();
    std::mt19937_64 rng(stream_seed(seed, ep));
    Vector obs = env->reset(rng);
    for (;;) {
      const Vector input = obs_moments != nullptr ? obs_normalize(frozen, obs, false) : obs;
      const auto sampled = sample_action(spec, theta, input, rng, true);
      auto res = env->step(sampled.action, rng);
      total += res.reward;
      if (res.done) break;
      obs = std::move(res.obs);
    }
  }
  return total / static_cast<double>(s.eval_episodes);
}

RunResult train_run(const TrainSettings& s, std::uint64_t seed) {
  s.validate();
  RunResult result;
  result.seed = seed;
  const PolicySpec spec = s.policy_spec();
  std::mt19937_64 init_rng(stream_seed(seed, 0));
  OptimizerState state(init_policy_params(spec, init_rng, s.initial_log_std));

  Critic critic;
  PopArtState shared_popart;
  if (!s.shared_ac) {
    critic.spec.layer_sizes.push_back(spec.obs_dim());
    for (auto w : s.critic_hidden) critic.spec.layer_sizes.push_back(w);
    critic.spec.layer_sizes.push_back(1);
    critic.spec.activation = s.activation;
    std::mt19937_64 critic_rng(stream_seed(seed, 1));
    critic.params = mlp_init(critic.spec, critic_rng);
    critic.m.assign(critic.params.size(), 0.0);
    critic.v.assign(critic.params.size(), 0.0);
  }

  const auto env = make_env(s);
  const TabularMdp mdp = chain_mdp(s.chain_states, s.gamma);
  const bool use_obs_norm = s.env == EnvKind::point_mass && s.normalize_obs;
  RunningMoments moments(env->obs_dim());
  std::mt19937_64 train_rng(stream_seed(seed, 2));
  const std::uint64_t eval_seed = stream_seed(seed, 3);
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = s.rollout_steps * s.n_envs;

  try {
    for (std::size_t k = 0; k < s.updates; ++k) {
      RolloutOptions opts;
      opts.obs_moments = use_obs_norm ? &moments : nullptr;
      if (s.shared_ac) {
        opts.value_fn = [&](const Vector& obs) {
          const double v = value(spec, state.theta, obs);
          return s.popart ? shared_popart.denormalize(v) : v;
        };
      } else {
        opts.value_fn = [&](const Vector& obs) { return critic_value(critic, s.popart, obs); };
      }
      const RolloutBatch batch =
          collect_rollouts(*env, spec, state.theta, s.rollout_steps, s.n_envs, stream_seed(seed, 100 + k), opts);
      const AdvantageResult adv = gae(batch, s.gamma, s.gae_lambda);
      const Vector targets = s.rat.advantage_source == AdvantageSource::pre_normalized
                                 ? normalize_advantages(adv.advantages)
                                 : adv.advantages;

      Vector value_targets = adv.returns;
      if (s.popart) {
        PopArtState& pa = s.shared_ac ? shared_popart : critic.popart;
        std::span<double> params = s.shared_ac ? state.theta.span() : std::span<double>(critic.params);
        const MlpSpec& net = s.shared_ac ? spec.net : critic.spec;
        auto [next, layer] = popart_rescale(pa, adv.returns, read_value_layer(net, params));
        pa = next;
        write_value_layer(net, params, layer);
        for (std::size_t i = 0; i < n; ++i) value_targets[i] = pa.normalize(adv.returns[i]);
      }

      state.begin_rollout(s.rat);
      const PolicyBatch pb = make_policy_batch(batch, targets);
      RatConfig cfg = s.rat;
      cfg.transform = s.rat.transform && s.method == Method::rat;

      // Empirical Fisher of the whole batch at theta_old for the point-mass
      // exact baseline.
      std::optional<Cholesky> fisher;
      if (s.method == Method::exact_tnpg && s.env == EnvKind::point_mass) {
        const Matrix h = per_sample_scores(spec, state.theta, batch.states, batch.actions);
        Matrix f = cross_gram(h);
        f *= 1.0 / static_cast<double>(n);
        f.add_diagonal(s.rat.lambda);
        fisher.emplace(f);
      }

      std::vector<StepRecord> steps;
      for (auto& pass : plan_inner(s, n, train_rng)) {
        std::vector<StepRecord> recs;
        if (s.method == Method::rat || s.method == Method::vanilla_pg) {
          recs = s.shared_ac ? shared_ac_pass(state, spec, SharedBatch{pb, value_targets}, cfg, pass.partition,
                                              pass.schedule)
                             : rat_pass(state, spec, pb, cfg, pass.partition, pass.schedule);
        } else {
          for (auto b : pass.schedule) {
            const auto& idx = pass.partition.blocks[b];
            StepRecord rec;
            rec.block = b;
            Vector d;
            if (s.method == Method::exact_tnpg && s.env == EnvKind::chain) {
              d = exact_quantities(mdp, spec, state.theta, s.rat.lambda).tnpg;
            } else if (s.method == Method::exact_tnpg) {
              const Rows r = gather_rows(pb, idx);
              d = fisher->solve(surrogate_gradient(spec, state.theta, r.old_log_probs, r.states, r.actions, r.targets));
            } else {
              const Rows r = gather_rows(pb, idx);
              const double c = 1.0 / std::sqrt(static_cast<double>(idx.size()));
              Matrix h = per_sample_scores(spec, state.theta, r.states, r.actions);
              h *= c;
              const auto cg = cg_normal_equations(DampedSystem{std::move(h), c * r.targets, s.rat.lambda},
                                                  s.cg_iters, 1e-10);
              d = cg.g;
              rec.residual_norm = cg.residual_norm;
            }
            apply_clipped_step(state, d, s.rat.lr, s.rat.clip, s.rat.clip_enabled, rec);
            recs.push_back(rec);
          }
        }
        steps.insert(steps.end(), recs.begin(), recs.end());
      }

      if (!s.shared_ac) train_critic(critic, s, batch.states, value_targets, train_rng);

      UpdateRecord u;
      u.update = k + 1;
      u.env_steps = (k + 1) * n;
      u.g_norm = norm(state.g);
      for (const auto& r : steps) {
        u.direction_norm += r.direction_norm;
        u.alpha += r.alpha;
        u.residual += r.residual_norm;
        u.max_step_norm = std::max(u.max_step_norm, r.step_norm);
        ++result.inner_steps;
        if (s.rat.clip_enabled && r.step_norm > std::min(s.rat.lr * r.direction_norm, s.rat.clip) + 1e-12) {
          ++result.clip_violations;
        }
      }
      if (!steps.empty()) {
        const double inv = 1.0 / static_cast<double>(steps.size());
        u.direction_norm *= inv;
        u.alpha *= inv;
        u.residual *= inv;
      }
      result.max_step_norm = std::max(result.max_step_norm, u.max_step_norm);
      u.eval_return = evaluate_policy(s, spec, state.theta, use_obs_norm ? &moments : nullptr, eval_seed);
      if (!std::isfinite(u.eval_return)) throw NonFiniteError("evaluation return is not finite");
      if (s.record_wall_time) {
        u.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      result.records.push_back(u);
      result.final_return = u.eval_return;
    }
  } catch (const std::exception& e) {
    result.failed = true;
    result.error = e.what();
    result.final_return = kNan;
  }
  result.final_theta = state.theta;
  return result;
}

std::vector<RunResult> train_seeds(const TrainSettings& settings, const std::vector<std::uint64_t>& seeds) {
  settings.validate();
  std::vector<std::future<RunResult>> jobs;
  jobs.reserve(seeds.size());
  for (auto seed : seeds) jobs.push_back(std::async(std::launch::async, train_run, std::cref(settings), seed));
  std::vector<RunResult> out;
  out.reserve(seeds.size());
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

std::vector<double> default_axis_values(const std::string& axis) {
  if (axis == "batch_size") return {32, 64, 128, 256};
  if (axis == "kaczmarz_iters") return {1, 4, 16, 32};
  if (axis == "damping") return {0.01, 0.1, 0.4, 0.8};
  if (axis == "no_transform" || axis == "no_clip") return {0, 1};
  throw ConfigError("unknown ablation axis '" + axis + "'");
}

TrainSettings ablation_point(const TrainSettings& base, const std::string& axis, double value) {
  TrainSettings s = base;
  const auto as_count = [&] {
    if (!(value >= 1.0) || value != std::floor(value)) throw ConfigError("axis " + axis + " needs positive integers");
    return static_cast<std::size_t>(value);
  };
  if (axis == "batch_size") {
    s.rat.minibatch = as_count();
  } else if (axis == "kaczmarz_iters") {
    s.kaczmarz_iters = as_count();
  } else if (axis == "damping") {
    s.rat.lambda = value;
  } else if (axis == "no_transform") {
    s.rat.transform = value == 0.0;
  } else if (axis == "no_clip") {
    s.rat.clip_enabled = value == 0.0;
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'");
  }
  s.validate();
  return s;
}

std::vector<AblationRow> run_ablation(const TrainSettings& base, const std::string& axis,
                                      const std::vector<double>& values, const std::vector<std::uint64_t>& seeds) {
  std::vector<TrainSettings> points;
  for (double v : values) points.push_back(ablation_point(base, axis, v));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (const auto& r : train_seeds(points[i], seeds)) rows.push_back({axis, values[i], r.seed, r.final_return, r.failed});
  }
  return rows;
}

VerifySettings VerifySettings::from_config(const Json& c) {
  VerifySettings v;
  v.seed = c.at("seed").get<std::uint64_t>();
  v.n_systems = c.at("n_systems").get<std::size_t>();
  v.n_rows = c.at("n_rows").get<std::size_t>();
  v.n_cols = c.at("n_cols").get<std::size_t>();
  v.block_size = c.at("block_size").get<std::size_t>();
  v.lambda = c.at("lambda").get<double>();
  v.n_steps = c.at("n_steps").get<std::size_t>();
  v.n_runs = c.at("n_runs").get<std::size_t>();
  v.sampling = c.at("sampling").get<std::string>() == "shuffled_epoch" ? BlockSampling::shuffled_epoch
                                                                       : BlockSampling::uniform_with_replacement;
  v.mu_samples = c.at("mu_samples").get<std::size_t>();
  v.bound_factor = c.at("bound_factor").get<double>();
  v.noise_std = c.at("noise_std").get<double>();
  v.noise_steps = c.at("noise_steps").get<std::size_t>();
  v.noise_runs = c.at("noise_runs").get<std::size_t>();
  v.floor_factor = c.at("floor_factor").get<double>();
  v.sweep_lambdas = c.at("sweep_lambdas").get<std::vector<double>>();
  v.sweep_rank = c.at("sweep_rank").get<std::size_t>();
  v.validate();
  return v;
}

void VerifySettings::validate() const {
  if (n_systems == 0 || n_runs == 0 || n_steps == 0) throw ConfigError("n_systems, n_runs and n_steps must be at least 1");
  if (n_cols == 0 || n_rows < n_cols) throw ConfigError("need n_rows >= n_cols >= 1 for full column rank");
  if (block_size == 0 || block_size > n_rows) throw ConfigError("block_size must lie in [1, n_rows]");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (mu_samples == 0) throw ConfigError("mu_samples must be at least 1");
  if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  if (noise_std > 0.0 && (noise_steps < 2 || noise_runs == 0)) throw ConfigError("noise_steps >= 2 and noise_runs >= 1");
  for (double l : sweep_lambdas) {
    if (!(l > 0.0)) throw ConfigError("sweep_lambdas must be positive");
  }
  if (sweep_rank == 0 || sweep_rank > std::min(block_size, n_cols)) {
    throw ConfigError("sweep_rank must lie in [1, min(block_size, n_cols)]");
  }
  const std::size_t n_blocks = (n_rows + block_size - 1) / block_size;
  if (!sweep_lambdas.empty() && n_blocks * sweep_rank < n_cols) {
    throw ConfigError("sweep system would not have full column rank");
  }
}

bool VerifyReport::all_satisfied() const {
  bool ok = noise_bound_satisfied && (lambda_sweep.size() < 2 || mu_decreasing_in_lambda);
  for (const auto& s : systems) ok = ok && s.bound_satisfied;
  return ok;
}

std::vector<double> mean_squared_errors(const DampedSystem& sys, const BlockPartition& partition, const Vector& g_star,
                                        std::size_t n_steps, std::size_t n_runs, std::uint64_t seed,
                                        double noise_std) {
  std::vector<double> mean(n_steps + 1, 0.0);
  const Vector g0(g_star.size());
  KaczmarzOptions opts;
  opts.noise_std = noise_std;
  for (std::size_t r = 0; r < n_runs; ++r) {
    const auto trace = run_kaczmarz(sys, partition, g0, n_steps, stream_seed(seed, r), g_star, opts);
    for (std::size_t j = 0; j <= n_steps; ++j) mean[j] += trace.errors[j] * trace.errors[j];
  }
  for (auto& m : mean) m /= static_cast<double>(n_runs);
  return mean;
}

Matrix low_rank_block_matrix(std::size_t n_rows, std::size_t n_cols, std::size_t block_size, std::size_t rank,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix h(n_rows, n_cols);
  for (std::size_t start = 0; start < n_rows; start += block_size) {
    const std::size_t rows = std::min(block_size, n_rows - start);
    Matrix c(rows, rank), v(rank, n_cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t k = 0; k < rank; ++k) c(i, k) = normal(rng);
    for (std::size_t k = 0; k < rank; ++k)
      for (std::size_t j = 0; j < n_cols; ++j) v(k, j) = normal(rng);
    const Matrix block = matmul(c, v);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < n_cols; ++j) h(start + i, j) = block(i, j);
  }
  return h;
}

namespace {

struct Synthetic {
  DampedSystem sys;
  Vector g_star;
};

Synthetic synthetic_system(const VerifySettings& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix h(v.n_rows, v.n_cols);
  for (std::size_t i = 0; i < v.n_rows; ++i)
    for (std::size_t j = 0; j < v.n_cols; ++j) h(i, j) = normal(rng);
  Vector g_star(v.n_cols);
  for (auto& x : g_star) x = normal(rng);
  Vector y = matvec(h, g_star);
  return {DampedSystem{std::move(h), std::move(y), v.lambda}, std::move(g_star)};
}

}  // namespace

VerifyReport verify_kaczmarz(const VerifySettings& v) {
  v.validate();
  VerifyReport rep;
  const auto partition = contiguous_partition(v.n_rows, v.block_size, v.sampling);
  for (std::size_t i = 0; i < v.n_systems; ++i) {
    const std::uint64_t sseed = stream_seed(v.seed, i);
    const Synthetic syn = synthetic_system(v, sseed);
    SystemReport sr;
    sr.mu_hat = estimate_mu(syn.sys.h, v.lambda, partition, v.mu_samples, stream_seed(sseed, 1));
    const auto err = mean_squared_errors(syn.sys, partition, syn.g_star, v.n_steps, v.n_runs, stream_seed(sseed, 2));
    double sx = 0, sy = 0, sxx = 0, sxy = 0, cnt = 0;
    for (std::size_t j = 0; j <= v.n_steps; ++j) {
      const double bound = std::pow(1.0 - sr.mu_hat, static_cast<double>(j)) * err[0];
      if (bound > 0.0) sr.max_bound_ratio = std::max(sr.max_bound_ratio, err[j] / bound);
      if (err[j] > 1e-250) {
        const double x = static_cast<double>(j), y = std::log(err[j]);
        sx += x, sy += y, sxx += x * x, sxy += x * y, cnt += 1;
      }
    }
    const double denom = cnt * sxx - sx * sx;
    sr.rate_fit = denom > 0.0 ? 1.0 - std::exp((cnt * sxy - sx * sy) / denom) : 0.0;
    sr.bound_satisfied = sr.max_bound_ratio <= v.bound_factor;
    rep.systems.push_back(sr);
  }

  if (v.noise_std > 0.0) {
    const std::uint64_t sseed = stream_seed(v.seed, 0);
    const Synthetic syn = synthetic_system(v, sseed);
    rep.noise_mu_hat = estimate_mu(syn.sys.h, v.lambda, partition, v.mu_samples, stream_seed(sseed, 1));
    rep.noise_eta2 = estimate_noise_eta2(syn.sys.h, v.lambda, partition, v.noise_std, 10 * v.mu_samples,
                                         stream_seed(sseed, 3));
    rep.noise_floor = rep.noise_eta2 / rep.noise_mu_hat;
    const auto err = mean_squared_errors(syn.sys, partition, syn.g_star, v.noise_steps, v.noise_runs,
                                         stream_seed(sseed, 4), v.noise_std);
    const std::size_t from = v.noise_steps / 2;
    double acc = 0.0;
    for (std::size_t j = from + 1; j <= v.noise_steps; ++j) acc += err[j];
    rep.noise_mean_error = acc / static_cast<double>(v.noise_steps - from);
    rep.noise_floor_ratio = rep.noise_mean_error / rep.noise_floor;
    rep.noise_bound_satisfied = rep.noise_floor_ratio <= v.floor_factor;
  }

  if (!v.sweep_lambdas.empty()) {
    const Matrix h = low_rank_block_matrix(v.n_rows, v.n_cols, v.block_size, v.sweep_rank, stream_seed(v.seed, 1u << 20));
    for (double l : v.sweep_lambdas) {
      rep.lambda_sweep.push_back({l, estimate_mu(h, l, partition, v.mu_samples, stream_seed(v.seed, 1u << 21))});
    }
    std::vector<SweepPoint> sorted = rep.lambda_sweep;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.lambda < b.lambda; });
    rep.mu_decreasing_in_lambda = true;
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      rep.mu_decreasing_in_lambda = rep.mu_decreasing_in_lambda && sorted[i].mu_hat < sorted[i - 1].mu_hat;
    }
  }
  return rep;
}

FieldOptions field_options_from_config(const Json& c) {
  FieldOptions o;
  o.seed = c.at("seed").get<std::uint64_t>();
  o.n_samples = c.at("n_samples").get<std::size_t>();
  o.lambda = c.at("lambda").get<double>();
  o.block_size = c.at("block_size").get<std::size_t>();
  o.n_steps = c.at("n_steps").get<std::size_t>();
  o.grid.theta1_min = c.at("theta1_min").get<double>();
  o.grid.theta1_max = c.at("theta1_max").get<double>();
  o.grid.theta1_points = c.at("theta1_points").get<std::size_t>();
  o.grid.theta2_min = c.at("theta2_min").get<double>();
  o.grid.theta2_max = c.at("theta2_max").get<double>();
  o.grid.theta2_points = c.at("theta2_points").get<std::size_t>();
  if (o.n_samples == 0) throw ConfigError("n_samples must be at least 1");
  if (o.block_size == 0 || o.block_size > o.n_samples) throw ConfigError("block_size must lie in [1, n_samples]");
  if (o.n_steps == 0) throw ConfigError("n_steps must be at least 1");
  if (!(o.lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (o.grid.theta1_points == 0 || o.grid.theta2_points == 0) throw ConfigError("grid needs at least one point per axis");
  for (double t : {o.grid.theta2_min, o.grid.theta2_max}) {
    if (t < -10.0 || t > 10.0) throw ConfigError("theta2 range must lie within [-10, 10]");
  }
  return o;
}

FieldAgreement field_agreement(const std::vector<FieldRow>& rows, double threshold) {
  FieldAgreement a;
  std::size_t ok = 0;
  for (std::size_t i = 0; i + 3 < rows.size(); i += 4) {
    // Rows come in groups of four per grid point, empirical then rat last.
    const FieldRow& emp = rows[i + 2];
    const FieldRow& rat = rows[i + 3];
    const double c = cosine(Vector{emp.g1, emp.g2}, Vector{rat.g1, rat.g2});
    a.min_cosine = std::min(a.min_cosine, c);
    ok += c >= threshold ? 1 : 0;
    ++a.points;
  }
  a.fraction = a.points == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(a.points);
  return a;
}

}  // namespace rat
