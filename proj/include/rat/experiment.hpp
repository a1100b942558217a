#pragma once

// Seeded experiment drivers behind the CLI: training runs, ablation sweeps,
// solver verification reports and the Gaussian gradient field.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rat/config.hpp"
#include "rat/likelihood.hpp"
#include "rat/optimizer.hpp"

namespace rat {

enum class EnvKind { chain, point_mass };
enum class Method { rat, vanilla_pg, exact_tnpg, cg_fvp };

struct TrainSettings {
  EnvKind env = EnvKind::chain;
  Method method = Method::rat;
  bool shared_ac = false;
  std::size_t updates = 30;
  std::size_t rollout_steps = 64;
  std::size_t n_envs = 8;
  std::size_t chain_states = 5;
  std::size_t episode_length = 20;
  std::size_t step_limit = 100;
  std::vector<std::size_t> hidden{32};
  std::vector<std::size_t> critic_hidden{32};
  Activation activation = Activation::tanh;
  double initial_log_std = 0.0;
  RatConfig rat{.minibatch = 128};
  /// Inner steps per update; 0 means epochs_per_update full passes.
  std::size_t kaczmarz_iters = 0;
  double gamma = kDefaultGamma;
  double gae_lambda = kDefaultGaeLambda;
  bool normalize_obs = true;  // point mass only; chain observations stay one-hot
  bool popart = true;
  std::size_t cg_iters = 10;
  std::size_t eval_episodes = 10;
  bool record_wall_time = false;

  static TrainSettings from_config(const Json& resolved);
  void validate() const;
  PolicySpec policy_spec() const;
};

struct UpdateRecord {
  std::size_t update = 0;
  std::size_t env_steps = 0;
  double eval_return = 0.0;
  double g_norm = 0.0;          // running Kaczmarz iterate after the update
  double direction_norm = 0.0;  // mean over inner steps
  double alpha = 0.0;           // mean over inner steps
  double max_step_norm = 0.0;
  double residual = 0.0;        // mean over inner steps
  double wall_time = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<UpdateRecord> records;
  double final_return = 0.0;
  bool failed = false;
  std::string error;
  std::size_t inner_steps = 0;
  std::size_t clip_violations = 0;  // steps with ||dtheta|| > min(lr ||d||, nu) + 1e-12
  double max_step_norm = 0.0;
  ParamVector final_theta;
};

/// One training run. Failures (non-finite parameters, solver errors) end the
/// run and are reported in the result rather than thrown.
RunResult train_run(const TrainSettings& settings, std::uint64_t seed);

/// Seeds run as independent parallel jobs; results follow the order of `seeds`.
std::vector<RunResult> train_seeds(const TrainSettings& settings, const std::vector<std::uint64_t>& seeds);

/// Final return of the current policy: exact expected episode return on the
/// chain, mean deterministic-policy return over evaluation episodes on the point mass.
double evaluate_policy(const TrainSettings& settings, const PolicySpec& spec, const ParamVector& theta,
                       const RunningMoments* obs_moments, std::uint64_t seed);

struct AblationRow {
  std::string axis;
  double value = 0.0;
  std::uint64_t seed = 0;
  double final_return = 0.0;
  bool failed = false;
};

/// Default grid of an ablation axis.
std::vector<double> default_axis_values(const std::string& axis);

/// `base` with the axis set to `value`. For no_transform / no_clip a nonzero
/// value removes the component.
TrainSettings ablation_point(const TrainSettings& base, const std::string& axis, double value);

std::vector<AblationRow> run_ablation(const TrainSettings& base, const std::string& axis,
                                      const std::vector<double>& values, const std::vector<std::uint64_t>& seeds);

struct VerifySettings {
  std::uint64_t seed = 0;
  std::size_t n_systems = 20;
  std::size_t n_rows = 100;
  std::size_t n_cols = 10;
  std::size_t block_size = 2;
  double lambda = 0.1;
  std::size_t n_steps = 200;
  std::size_t n_runs = 200;
  BlockSampling sampling = BlockSampling::uniform_with_replacement;
  std::size_t mu_samples = 2000;
  double bound_factor = 1.1;
  double noise_std = 0.1;
  std::size_t noise_steps = 2000;
  std::size_t noise_runs = 50;
  double floor_factor = 1.2;
  std::vector<double> sweep_lambdas{0.01, 0.1, 1.0};
  std::size_t sweep_rank = 1;

  static VerifySettings from_config(const Json& resolved);
  void validate() const;
};

struct SystemReport {
  double mu_hat = 0.0;
  double rate_fit = 0.0;          // 1 - exp(slope of log mean squared error)
  double max_bound_ratio = 0.0;   // max_j mean_err_j / ((1 - mu)^j err_0)
  bool bound_satisfied = false;   // max_bound_ratio <= bound_factor
};

struct SweepPoint {
  double lambda = 0.0;
  double mu_hat = 0.0;
};

struct VerifyReport {
  std::vector<SystemReport> systems;
  double noise_mu_hat = 0.0;
  double noise_eta2 = 0.0;
  double noise_floor = 0.0;        // eta2 / mu
  double noise_mean_error = 0.0;   // long-run average squared error
  double noise_floor_ratio = 0.0;  // noise_mean_error / noise_floor; 0 without noise
  bool noise_bound_satisfied = true;
  std::vector<SweepPoint> lambda_sweep;
  bool mu_decreasing_in_lambda = false;

  bool all_satisfied() const;
};

/// Random consistent systems y = H g*; a noisy run on the first system; and a
/// lambda sweep on a system whose blocks have rank `sweep_rank`.
VerifyReport verify_kaczmarz(const VerifySettings& settings);

/// Squared errors ||g_j - g*||^2 averaged over `n_runs` seeded runs, j = 0..n_steps.
std::vector<double> mean_squared_errors(const DampedSystem& sys, const BlockPartition& partition,
                                        const Vector& g_star, std::size_t n_steps, std::size_t n_runs,
                                        std::uint64_t seed, double noise_std = 0.0);

/// Rows of a matrix whose every block of `block_size` rows has rank `rank`.
Matrix low_rank_block_matrix(std::size_t n_rows, std::size_t n_cols, std::size_t block_size, std::size_t rank,
                             std::uint64_t seed);

FieldOptions field_options_from_config(const Json& resolved);

/// Fraction of grid points where the RAT and empirical natural gradients
/// have cosine at least `threshold`, and the smallest such cosine.
struct FieldAgreement {
  std::size_t points = 0;
  double fraction = 0.0;
  double min_cosine = 1.0;
};
FieldAgreement field_agreement(const std::vector<FieldRow>& rows, double threshold);

/// Shortest round-trip text of a double; "nan" / "inf" / "-inf" otherwise.
std::string format_double(double x);

/// Runs a command on a resolved config, writing into `out_dir`. Returns 0 or
/// 1 (bound violated); throws ConfigError on bad settings and other
/// exceptions on runtime failure. Train returns 3 when a seed failed.
int run_command(Command command, const Json& resolved, const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace rat
