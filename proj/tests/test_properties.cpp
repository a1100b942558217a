#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "rat/advantage.hpp"
#include "rat/env.hpp"
#include "rat/kaczmarz.hpp"
#include "rat/optimizer.hpp"
#include "rat/random.hpp"
#include "tabular_batch.hpp"

using namespace rat;

namespace {

double log_uniform(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::exp(u(rng));
}

std::size_t size_in(std::mt19937_64& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

// Q diag(d) Q^T with Q from Gram-Schmidt on a random matrix.
Matrix spd_with_condition(std::size_t n, double cond, std::mt19937_64& rng) {
  Matrix q = oracle::random_matrix(n, n, rng);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0;
      for (std::size_t i = 0; i < n; ++i) d += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < n; ++i) q(i, j) -= d * q(i, k);
    }
    double nn = 0;
    for (std::size_t i = 0; i < n; ++i) nn += q(i, j) * q(i, j);
    nn = std::sqrt(nn);
    for (std::size_t i = 0; i < n; ++i) q(i, j) /= nn;
  }
  Matrix m(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double d = std::pow(cond, -static_cast<double>(k) / static_cast<double>(n - 1));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(i, j) += d * q(i, k) * q(j, k);
  }
  return m;
}

double proximal_objective(const Matrix& h, const Vector& y, double lambda, const Vector& g_prev, const Vector& g) {
  Vector r = y - oracle::mat_vec(h, g);
  Vector d = g - g_prev;
  return oracle::l2(r) * oracle::l2(r) + lambda * oracle::l2(d) * oracle::l2(d);
}

}  // namespace

TEST_CASE("primal and dual solutions agree on 200 random systems") {
  std::mt19937_64 rng(2001);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = size_in(rng, 1, 200), p = size_in(rng, 1, 50);
    DampedSystem sys{oracle::random_matrix(n, p, rng), oracle::random_vector(n, rng), log_uniform(rng, 1e-3, 10)};
    Vector primal = exact_primal(sys);
    Vector dual = exact_dual_woodbury(sys);
    CHECK(oracle::diff_norm(primal, dual) <= 1e-8 * (1 + oracle::l2(primal)));
  }
}

TEST_CASE("solve_spd recovers x up to condition number 1e8") {
  std::mt19937_64 rng(2002);
  for (double cond : {1.0, 1e2, 1e4, 1e6, 1e8}) {
    for (int rep = 0; rep < 4; ++rep) {
      Matrix m = spd_with_condition(12, cond, rng);
      Vector x = oracle::random_vector(12, rng);
      Vector got = solve_spd(m, matvec(m, x));
      CHECK(oracle::diff_norm(got, x) <= 1e-8 * oracle::l2(x));
    }
  }
}

TEST_CASE("matmul is associative") {
  std::mt19937_64 rng(2003);
  for (int k = 0; k < 50; ++k) {
    const std::size_t a = size_in(rng, 1, 9), b = size_in(rng, 1, 9), c = size_in(rng, 1, 9), d = size_in(rng, 1, 9);
    Matrix x = oracle::random_matrix(a, b, rng), y = oracle::random_matrix(b, c, rng), z = oracle::random_matrix(c, d, rng);
    Matrix l = matmul(matmul(x, y), z), r = matmul(x, matmul(y, z));
    double scale = 0;
    for (double v : r.values()) scale = std::max(scale, std::abs(v));
    CHECK(oracle::max_abs_diff(l, r) <= 1e-10 * std::max(1.0, scale));
  }
}

TEST_CASE("gram is symmetric positive semidefinite") {
  std::mt19937_64 rng(2004);
  for (int k = 0; k < 30; ++k) {
    Matrix h = oracle::random_matrix(size_in(rng, 1, 12), size_in(rng, 1, 30), rng, 3.0);
    Matrix g = gram(h);
    CHECK(oracle::max_abs_diff(g, oracle::transpose(g)) <= 1e-12);
    CHECK(oracle::jacobi_eigenvalues(g).front() >= -1e-10);
  }
}

TEST_CASE("noise-free Kaczmarz never increases the error") {
  std::mt19937_64 rng(2005);
  for (int k = 0; k < 10; ++k) {
    Matrix h = oracle::random_matrix(60, 8, rng);
    Vector g_star = oracle::random_vector(8, rng);
    DampedSystem sys{h, matvec(h, g_star), log_uniform(rng, 1e-3, 10)};
    auto part = contiguous_partition(60, size_in(rng, 1, 10), BlockSampling::uniform_with_replacement);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      auto trace = run_kaczmarz(sys, part, Vector(8), 100, seed, g_star);
      for (std::size_t j = 1; j < trace.errors.size(); ++j) CHECK(trace.errors[j] <= trace.errors[j - 1] + 1e-12);
    }
  }
}

TEST_CASE("block projection satisfies P^2 <= P") {
  std::mt19937_64 rng(2006);
  for (int k = 0; k < 5; ++k) {
    Matrix h = oracle::random_matrix(size_in(rng, 1, 6), 7, rng, 2.0);
    const double lambda = log_uniform(rng, 1e-3, 10);
    Matrix p = projection_matrix(h, lambda);
    auto ev = oracle::jacobi_eigenvalues(p);
    CHECK(ev.front() >= -1e-12);
    CHECK(ev.back() < 1.0);
    Matrix p2 = matmul(p, p);
    for (int v = 0; v < 100; ++v) {
      Vector x = oracle::random_vector(7, rng);
      CHECK(dot(x, oracle::mat_vec(p2, x)) <= dot(x, oracle::mat_vec(p, x)) + 1e-10);
    }
  }
}

TEST_CASE("rat_block_step is a minimizer of the proximal objective") {
  std::mt19937_64 rng(2007);
  for (int k = 0; k < 10; ++k) {
    const std::size_t b = size_in(rng, 1, 8), p = size_in(rng, 1, 8);
    Matrix h = oracle::random_matrix(b, p, rng);
    Vector y = oracle::random_vector(b, rng), g_prev = oracle::random_vector(p, rng);
    const double lambda = log_uniform(rng, 1e-2, 10);
    Vector g = rat_block_step(g_prev, h, y, lambda).g_next;
    const double f0 = proximal_objective(h, y, lambda, g_prev, g);
    for (int d = 0; d < 100; ++d) {
      Vector u = oracle::random_vector(p, rng);
      u *= 1e-3 / oracle::l2(u);
      CHECK(proximal_objective(h, y, lambda, g_prev, g + u) >= f0 - 1e-12);
    }
  }
}

TEST_CASE("first RAT step approaches vanilla PG as lambda grows") {
  auto mdp = chain_mdp(5, 0.9);
  auto spec = testing_support::tabular_spec(5, 2);
  std::mt19937_64 rng(2008);
  ParamVector theta = oracle::random_vector(spec.num_params(), rng, 0.5);
  auto ex = exact_quantities(mdp, spec, theta, 0.1);
  auto samples = testing_support::sample_tabular(mdp, spec, theta, ex, 2000, rng);
  Vector vanilla = testing_support::first_step_direction(spec, theta, samples.batch(), 1.0, false);
  double prev = -1.0;
  for (double lambda : {1.0, 10.0, 100.0, 1e4, 1e6}) {
    Vector d = testing_support::first_step_direction(spec, theta, samples.batch(), lambda, true);
    const double c = oracle::cos_sim(d, vanilla);
    CHECK(c >= prev - 1e-12);
    prev = c;
  }
  CHECK(prev >= 0.999);
}

TEST_CASE("mean score row equals the batched gradient of the mean log-likelihood") {
  std::mt19937_64 rng(2009);
  for (HeadKind head : {HeadKind::gaussian, HeadKind::categorical}) {
    PolicySpec spec{MlpSpec{{3, 6, 2}, Activation::tanh}, head, false};
    ParamVector theta = oracle::random_vector(spec.num_params(), rng, 0.5);
    std::vector<Vector> states;
    std::vector<Action> actions;
    for (int i = 0; i < 25; ++i) {
      states.push_back(oracle::random_vector(3, rng));
      actions.push_back(sample_action(spec, theta, states.back(), rng).action);
    }
    Matrix h = per_sample_scores(spec, theta, states, actions);
    Vector mean_row(h.cols());
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < h.cols(); ++j) mean_row[j] += h(i, j) / h.rows();
    Vector batched = surrogate_gradient(spec, theta, theta, states, actions, Vector(25, 1.0));
    CHECK(oracle::diff_norm(mean_row, batched) <= 1e-10);
    Vector fd = oracle::finite_difference(
        [&](const Vector& t) {
          double s = 0;
          for (std::size_t i = 0; i < states.size(); ++i) s += log_prob(spec, t, states[i], actions[i]);
          return s / states.size();
        },
        theta);
    CHECK(oracle::max_rel_error(batched, fd) <= 1e-4);
  }
}

TEST_CASE("observation normalization whitens a stationary stream") {
  std::mt19937_64 rng(2010);
  std::normal_distribution<double> a(3.0, 2.0), b(-1.0, 0.5);
  RunningMoments m(2);
  for (int i = 0; i < 20000; ++i) obs_normalize(m, Vector{a(rng), b(rng)}, true);
  double s[2] = {0, 0}, ss[2] = {0, 0};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    Vector o = obs_normalize(m, Vector{a(rng), b(rng)}, false);
    for (int d = 0; d < 2; ++d) s[d] += o[d], ss[d] += o[d] * o[d];
  }
  for (int d = 0; d < 2; ++d) {
    const double mean = s[d] / n, sd = std::sqrt(ss[d] / n - mean * mean);
    CHECK(std::abs(mean) <= 0.05);
    CHECK(std::abs(sd - 1.0) <= 0.05);
  }
}

TEST_CASE("normalize_advantages ignores constant shifts") {
  std::mt19937_64 rng(2011);
  for (int k = 0; k < 20; ++k) {
    Vector adv = oracle::random_vector(size_in(rng, 2, 50), rng, 3.0);
    const double c = std::uniform_real_distribution<double>(-100, 100)(rng);
    Vector shifted = adv;
    for (auto& x : shifted) x += c;
    CHECK(oracle::diff_norm(normalize_advantages(adv), normalize_advantages(shifted)) <= 1e-10);
  }
}

TEST_CASE("advantages are centered under the policy in every state") {
  std::mt19937_64 rng(2012);
  auto mdp = chain_mdp(5, 0.95);
  auto spec = testing_support::tabular_spec(5, 2);
  for (int k = 0; k < 10; ++k) {
    ParamVector theta = oracle::random_vector(spec.num_params(), rng, 2.0);
    auto ex = exact_quantities(mdp, spec, theta, 0.1);
    for (std::size_t s = 0; s < 5; ++s) {
      auto probs = action_probabilities(spec, theta, one_hot(s, 5));
      CHECK(std::abs(probs[0] * ex.adv[2 * s] + probs[1] * ex.adv[2 * s + 1]) <= 1e-10);
    }
  }
}

TEST_CASE("rollouts depend only on the seed") {
  PolicySpec spec{MlpSpec{{4, 8, 2}, Activation::tanh}, HeadKind::gaussian, false};
  std::mt19937_64 rng(2013);
  ParamVector theta = init_policy_params(spec, rng);
  PointMassEnv env;
  for (std::uint64_t seed : {0ull, 5ull, 99ull}) {
    auto a = collect_rollouts(env, spec, theta, 120, 3, seed);
    auto b = collect_rollouts(env, spec, theta, 120, 3, seed);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.states[i] == b.states[i]);
      CHECK(a.rewards[i] == b.rewards[i]);
      CHECK(a.dones[i] == b.dones[i]);
      CHECK(a.behavior_log_probs[i] == b.behavior_log_probs[i]);
    }
  }
}
