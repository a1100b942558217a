#pragma once

// Maximum-likelihood fitting of a univariate Gaussian N(x | mu, sigma) with
// theta1 = mu and theta2 = log sigma: closed-form vanilla, natural and damped
// natural gradients, and their empirical / RAT estimates.

#include <cstdint>
#include <string>
#include <vector>

#include "rat/kaczmarz.hpp"
#include "rat/tensor.hpp"

namespace rat {

struct GaussParams {
  double theta1 = 0.0;  // mean
  double theta2 = 0.0;  // log standard deviation, within [-10, 10]

  void validate() const;
};

/// diag(exp(-2 theta2), 2).
Matrix analytic_fisher(const GaussParams& p);

struct GaussGradients {
  Vector vanilla;
  Vector natural;
  Vector damped;
};

/// Sample means of the closed-form gradient expressions; `damped` uses `lambda`.
GaussGradients analytic_gradients(const GaussParams& p, const Vector& samples, double lambda = 0.1);

/// Rows are d/dtheta log N(x_i | theta).
Matrix gaussian_scores(const GaussParams& p, const Vector& samples);

/// Mean log-likelihood of the samples.
double mean_log_likelihood(const GaussParams& p, const Vector& samples);

/// The least-squares system whose damped solution is the empirical damped
/// natural gradient: rows score_i / sqrt(N), targets 1 / sqrt(N).
DampedSystem gaussian_system(const GaussParams& p, const Vector& samples, double lambda);

/// (lambda I + H^T H / N)^{-1} mean score.
Vector empirical_natural_gradient(const GaussParams& p, const Vector& samples, double lambda);

/// Fixed-policy RAT: `n_steps` damped block-Kaczmarz steps from g = 0 on
/// gaussian_system, blocks of `block_size` from a random partition.
Vector rat_estimate_demo(const GaussParams& p, const Vector& samples, double lambda, std::size_t block_size,
                         std::size_t n_steps, std::uint64_t seed);

struct GridSpec {
  double theta1_min = -2.0, theta1_max = 2.0;
  std::size_t theta1_points = 17;
  double theta2_min = -1.5, theta2_max = 1.5;
  std::size_t theta2_points = 13;
};

struct FieldRow {
  double theta1 = 0.0;
  double theta2 = 0.0;
  std::string method;  // vanilla, natural_closed_form, natural_empirical, rat
  double g1 = 0.0;
  double g2 = 0.0;
};

struct FieldOptions {
  GridSpec grid;
  std::size_t n_samples = 2000;
  double lambda = 0.1;
  std::size_t block_size = 500;
  std::size_t n_steps = 4;
  std::uint64_t seed = 0;
};

/// Gradient field on the grid, four rows per point. Each grid point draws its
/// own N(0, 1) sample set from stream (seed, point index).
std::vector<FieldRow> gradient_field(const FieldOptions& options);

}  // namespace rat
