#pragma once

// Regularized least squares  min_g ||y - H g||^2 + lambda ||g||^2  and the
// randomized block Kaczmarz iteration that produces transformed advantages.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "rat/tensor.hpp"

namespace rat {

struct DampedSystem {
  Matrix h;  // n x p
  Vector y;  // n
  double lambda = 0.1;

  void validate() const;
};

enum class BlockSampling { uniform_with_replacement, shuffled_epoch };

struct BlockPartition {
  std::vector<std::vector<std::size_t>> blocks;
  BlockSampling sampling = BlockSampling::shuffled_epoch;

  /// Blocks nonempty, disjoint and within range; a shuffled_epoch partition
  /// must also cover every row.
  void validate(std::size_t n_rows) const;
  std::size_t size() const { return blocks.size(); }
};

/// Consecutive rows in blocks of `block_size` (the last block may be short).
BlockPartition contiguous_partition(std::size_t n_rows, std::size_t block_size,
                                    BlockSampling sampling = BlockSampling::shuffled_epoch);

/// Rows permuted by `rng`, then cut into blocks of `block_size`.
BlockPartition random_partition(std::size_t n_rows, std::size_t block_size, std::mt19937_64& rng,
                                BlockSampling sampling = BlockSampling::shuffled_epoch);

/// Indices of the blocks visited in `n_steps` steps. shuffled_epoch visits
/// every block once per epoch in a freshly shuffled order; the other mode
/// draws blocks i.i.d. uniformly.
std::vector<std::size_t> block_schedule(const BlockPartition& partition, std::size_t n_steps,
                                        std::uint64_t seed);

struct KaczmarzTrace {
  std::vector<Vector> iterates;   // g_0 .. g_n
  std::vector<double> errors;     // ||g_j - g*||, empty without g*
  std::vector<double> residuals;  // ||y_tau - H_tau g_{j-1}|| per step
  std::vector<std::size_t> blocks;  // block visited per step
};

/// (lambda I_p + H^T H)^{-1} H^T y via the p x p system.
Vector exact_primal(const DampedSystem& sys);

/// H^T (lambda I_n + H H^T)^{-1} y via the n x n system.
Vector exact_dual_woodbury(const DampedSystem& sys);

struct BlockStep {
  Vector g_next;
  Vector transformed;  // the transformed advantage of the block
};

/// One proximal block update: minimizes ||y - H g||^2 + lambda ||g - g_prev||^2.
BlockStep rat_block_step(const Vector& g_prev, const Matrix& h_block, const Vector& y_block,
                         double lambda);

struct KaczmarzOptions {
  /// When positive, each step's targets become H_tau g* + xi with
  /// xi ~ N(0, noise_std^2 I); requires g*.
  double noise_std = 0.0;
};

KaczmarzTrace run_kaczmarz(const DampedSystem& sys, const BlockPartition& partition, const Vector& g0,
                           std::size_t n_steps, std::uint64_t seed,
                           const std::optional<Vector>& g_star = std::nullopt,
                           const KaczmarzOptions& options = {});

/// P = H^T (lambda I + H H^T)^{-1} H for one block.
Matrix projection_matrix(const Matrix& h_block, double lambda);

/// lambda_min(E[P_tau]) with tau uniform over the partition's blocks. Exact
/// enumeration for up to 64 blocks, Monte Carlo with `n_samples` draws beyond.
double estimate_mu(const Matrix& h, double lambda, const BlockPartition& partition,
                   std::size_t n_samples, std::uint64_t seed);

/// Always the Monte Carlo average over `n_samples` uniformly drawn blocks.
double estimate_mu_monte_carlo(const Matrix& h, double lambda, const BlockPartition& partition,
                               std::size_t n_samples, std::uint64_t seed);

/// Monte Carlo estimate of E||H_tau^T (lambda I + H_tau H_tau^T)^{-1} xi||^2 for
/// xi ~ N(0, noise_std^2 I) and tau uniform over blocks.
double estimate_noise_eta2(const Matrix& h, double lambda, const BlockPartition& partition,
                           double noise_std, std::size_t n_samples, std::uint64_t seed);

struct CgResult {
  Vector g;
  std::size_t iterations = 0;
  double residual_norm = 0.0;
  bool converged = false;
};

/// Conjugate gradient on (lambda I + H^T H) g = H^T y using only products
/// H v and H^T u. Stops when ||r|| <= tol * ||H^T y||.
CgResult cg_normal_equations(const DampedSystem& sys, std::size_t max_iter, double tol);

}  // namespace rat
