#include "rat/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "rat/kaczmarz.hpp"
#include "rat/random.hpp"

namespace rat {

void GaussParams::validate() const {
  if (!std::isfinite(theta1) || !std::isfinite(theta2)) throw NonFiniteError("GaussParams: non-finite parameter");
  if (theta2 < -10.0 || theta2 > 10.0) throw ConfigError("GaussParams: theta2 outside [-10, 10]");
}

Matrix analytic_fisher(const GaussParams& p) {
  p.validate();
  return Matrix{{std::exp(-2.0 * p.theta2), 0.0}, {0.0, 2.0}};
}

GaussGradients analytic_gradients(const GaussParams& p, const Vector& samples, double lambda) {
  p.validate();
  if (samples.empty()) throw ShapeError("analytic_gradients: no samples");
  const double var = std::exp(2.0 * p.theta2);
  Vector vanilla(2), natural(2), damped(2);
  for (double x : samples) {
    const double d = x - p.theta1;
    vanilla[0] += d / var;
    vanilla[1] += -1.0 + d * d / var;
    natural[0] += d;
    natural[1] += -0.5 + d * d / (2.0 * var);
    damped[0] += d / (1.0 + lambda * var);
    damped[1] += -1.0 / (2.0 + lambda) + d * d / ((2.0 + lambda) * var);
  }
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  return {inv_n * vanilla, inv_n * natural, inv_n * damped};
}

Matrix gaussian_scores(const GaussParams& p, const Vector& samples) {
  p.validate();
  const double inv_var = std::exp(-2.0 * p.theta2);
  Matrix h(samples.size(), 2);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double d = samples[i] - p.theta1;
    h(i, 0) = inv_var * d;
    h(i, 1) = -1.0 + inv_var * d * d;
  }
  return h;
}

double mean_log_likelihood(const GaussParams& p, const Vector& samples) {
  const double inv_var = std::exp(-2.0 * p.theta2);
  double total = 0.0;
  for (double x : samples) {
    const double d = x - p.theta1;
    total += -0.5 * std::log(2.0 * std::numbers::pi) - p.theta2 - 0.5 * d * d * inv_var;
  }
  return total / static_cast<double>(samples.size());
}

DampedSystem gaussian_system(const GaussParams& p, const Vector& samples, double lambda) {
  if (samples.empty()) throw ShapeError("gaussian_system: no samples");
  const double c = 1.0 / std::sqrt(static_cast<double>(samples.size()));
  Matrix h = gaussian_scores(p, samples);
  h *= c;
  return DampedSystem{std::move(h), Vector(samples.size(), c), lambda};
}

Vector empirical_natural_gradient(const GaussParams& p, const Vector& samples, double lambda) {
  return exact_primal(gaussian_system(p, samples, lambda));
}

Vector rat_estimate_demo(const GaussParams& p, const Vector& samples, double lambda, std::size_t block_size,
                         std::size_t n_steps, std::uint64_t seed) {
  if (block_size == 0 || block_size > samples.size()) {
    throw ConfigError("rat_estimate_demo: block size must lie in [1, sample count]");
  }
  const DampedSystem sys = gaussian_system(p, samples, lambda);
  std::mt19937_64 rng(stream_seed(seed, 0));
  const auto partition = random_partition(samples.size(), block_size, rng);
  const auto trace = run_kaczmarz(sys, partition, Vector(2), n_steps, stream_seed(seed, 1));
  return trace.iterates.back();
}

std::vector<FieldRow> gradient_field(const FieldOptions& o) {
  const auto axis = [](double lo, double hi, std::size_t n, std::size_t i) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  std::vector<FieldRow> rows;
  rows.reserve(o.grid.theta1_points * o.grid.theta2_points * 4);
  std::size_t point = 0;
  for (std::size_t i = 0; i < o.grid.theta1_points; ++i) {
    for (std::size_t j = 0; j < o.grid.theta2_points; ++j, ++point) {
      const GaussParams p{axis(o.grid.theta1_min, o.grid.theta1_max, o.grid.theta1_points, i),
                          axis(o.grid.theta2_min, o.grid.theta2_max, o.grid.theta2_points, j)};
      std::mt19937_64 rng(stream_seed(o.seed, 2 * point));
      std::normal_distribution<double> normal(0.0, 1.0);
      Vector samples(o.n_samples);
      for (auto& x : samples) x = normal(rng);
      const auto closed = analytic_gradients(p, samples, o.lambda);
      const Vector empirical = empirical_natural_gradient(p, samples, o.lambda);
      const Vector rat = rat_estimate_demo(p, samples, o.lambda, o.block_size, o.n_steps,
                                           stream_seed(o.seed, 2 * point + 1));
      const auto push = [&](const char* method, const Vector& g) {
        rows.push_back({p.theta1, p.theta2, method, g[0], g[1]});
      };
      push("vanilla", closed.vanilla);
      push("natural_closed_form", closed.natural);
      push("natural_empirical", empirical);
      push("rat", rat);
    }
  }
  return rows;
}

}  // namespace rat
