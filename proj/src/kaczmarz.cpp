#include "rat/kaczmarz.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "rat/random.hpp"

namespace rat {
namespace {

constexpr std::size_t kExactEnumerationLimit = 64;

Matrix damped_gram(const Matrix& h, double lambda) {
  Matrix k = gram(h);
  k.add_diagonal(lambda);
  return k;
}

void require_positive_lambda(double lambda, const char* where) {
  if (!(lambda > 0.0)) throw ConfigError(std::string(where) + ": damping must be positive");
}

Matrix projection_sum(const Matrix& h, double lambda, const BlockPartition& partition,
                      const std::vector<std::size_t>& picks) {
  Matrix acc(h.cols(), h.cols());
  std::vector<std::size_t> counts(partition.size(), 0);
  for (auto b : picks) ++counts[b];
  for (std::size_t b = 0; b < partition.size(); ++b) {
    if (counts[b] == 0) continue;
    Matrix p = projection_matrix(select_rows(h, partition.blocks[b]), lambda);
    p *= static_cast<double>(counts[b]);
    acc += p;
  }
  acc *= 1.0 / static_cast<double>(picks.size());
  return acc;
}

}  // namespace

void DampedSystem::validate() const {
  require_positive_lambda(lambda, "DampedSystem");
  if (h.rows() != y.size()) {
    throw ShapeError("DampedSystem: H has " + std::to_string(h.rows()) + " rows, y has " +
                     std::to_string(y.size()));
  }
}

void BlockPartition::validate(std::size_t n_rows) const {
  if (blocks.empty()) throw ConfigError("BlockPartition: no blocks");
  std::vector<char> seen(n_rows, 0);
  std::size_t covered = 0;
  for (const auto& b : blocks) {
    if (b.empty()) throw ConfigError("BlockPartition: empty block");
    for (auto i : b) {
      if (i >= n_rows) throw ShapeError("BlockPartition: row index out of range");
      if (seen[i]) throw ConfigError("BlockPartition: blocks overlap");
      seen[i] = 1;
      ++covered;
    }
  }
  if (sampling == BlockSampling::shuffled_epoch && covered != n_rows) {
    throw ConfigError("BlockPartition: shuffled_epoch partition must cover all rows");
  }
}

BlockPartition contiguous_partition(std::size_t n_rows, std::size_t block_size, BlockSampling sampling) {
  if (block_size == 0) throw ConfigError("contiguous_partition: block size must be positive");
  BlockPartition p{{}, sampling};
  for (std::size_t start = 0; start < n_rows; start += block_size) {
    std::vector<std::size_t> b(std::min(block_size, n_rows - start));
    std::iota(b.begin(), b.end(), start);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

BlockPartition random_partition(std::size_t n_rows, std::size_t block_size, std::mt19937_64& rng,
                                BlockSampling sampling) {
  if (block_size == 0) throw ConfigError("random_partition: block size must be positive");
  std::vector<std::size_t> perm(n_rows);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle_indices(perm, rng);
  BlockPartition p{{}, sampling};
  for (std::size_t start = 0; start < n_rows; start += block_size) {
    const std::size_t end = std::min(n_rows, start + block_size);
    p.blocks.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                          perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return p;
}

std::vector<std::size_t> block_schedule(const BlockPartition& partition, std::size_t n_steps,
                                        std::uint64_t seed) {
  const std::size_t m = partition.size();
  if (m == 0) throw ConfigError("block_schedule: empty partition");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(n_steps);
  if (partition.sampling == BlockSampling::uniform_with_replacement) {
    for (std::size_t j = 0; j < n_steps; ++j) out.push_back(uniform_index(rng, m));
    return out;
  }
  std::vector<std::size_t> order(m);
  while (out.size() < n_steps) {
    std::iota(order.begin(), order.end(), 0);
    shuffle_indices(order, rng);
    for (auto b : order) {
      if (out.size() == n_steps) break;
      out.push_back(b);
    }
  }
  return out;
}

Vector exact_primal(const DampedSystem& sys) {
  sys.validate();
  Matrix a = cross_gram(sys.h);
  a.add_diagonal(sys.lambda);
  return solve_spd(a, matvec_t(sys.h, sys.y));
}

Vector exact_dual_woodbury(const DampedSystem& sys) {
  sys.validate();
  return matvec_t(sys.h, solve_spd(damped_gram(sys.h, sys.lambda), sys.y));
}

BlockStep rat_block_step(const Vector& g_prev, const Matrix& h_block, const Vector& y_block,
                         double lambda) {
  require_positive_lambda(lambda, "rat_block_step");
  if (h_block.rows() != y_block.size() || h_block.cols() != g_prev.size()) {
    throw ShapeError("rat_block_step: inconsistent block dimensions");
  }
  Vector residual = y_block - matvec(h_block, g_prev);
  if (h_block.rows() > h_block.cols()) {
    // Tall block: z = (lambda I + H^T H)^{-1} H^T r is the increment and
    // (lambda I + H H^T)^{-1} r = (r - H z) / lambda.
    Matrix m = cross_gram(h_block);
    m.add_diagonal(lambda);
    Vector z = solve_spd(m, matvec_t(h_block, residual));
    Vector transformed = residual - matvec(h_block, z);
    transformed *= 1.0 / lambda;
    return {g_prev + z, std::move(transformed)};
  }
  Vector transformed = solve_spd(damped_gram(h_block, lambda), residual);
  Vector g_next = g_prev + matvec_t(h_block, transformed);
  return {std::move(g_next), std::move(transformed)};
}

KaczmarzTrace run_kaczmarz(const DampedSystem& sys, const BlockPartition& partition, const Vector& g0,
                           std::size_t n_steps, std::uint64_t seed, const std::optional<Vector>& g_star,
                           const KaczmarzOptions& options) {
  sys.validate();
  partition.validate(sys.h.rows());
  if (n_steps == 0) throw ConfigError("run_kaczmarz: n_steps must be at least 1");
  if (g0.size() != sys.h.cols()) throw ShapeError("run_kaczmarz: g0 length");
  if (g_star && g_star->size() != sys.h.cols()) throw ShapeError("run_kaczmarz: g* length");
  if (options.noise_std > 0.0 && !g_star) throw ConfigError("run_kaczmarz: noisy targets need g*");

  // Block sampling and target noise use separate streams so that a noisy run
  // visits the same blocks as its noise-free counterpart.
  const auto schedule = block_schedule(partition, n_steps, seed);
  std::mt19937_64 noise_rng(stream_seed(seed, 1));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Per-block operands are cached: blocks repeat every epoch.
  std::vector<std::optional<Matrix>> h_blocks(partition.size());
  std::vector<std::optional<Cholesky>> factors(partition.size());

  KaczmarzTrace trace;
  trace.iterates.reserve(n_steps + 1);
  trace.iterates.push_back(g0);
  if (g_star) trace.errors.push_back(norm(g0 - *g_star));
  Vector g = g0;
  for (auto b : schedule) {
    const auto& rows = partition.blocks[b];
    if (!h_blocks[b]) {
      h_blocks[b] = select_rows(sys.h, rows);
      factors[b].emplace(damped_gram(*h_blocks[b], sys.lambda));
    }
    const Matrix& hb = *h_blocks[b];
    Vector yb(rows.size());
    if (options.noise_std > 0.0) {
      yb = matvec(hb, *g_star);
      for (std::size_t i = 0; i < yb.size(); ++i) yb[i] += options.noise_std * normal(noise_rng);
    } else {
      yb = select(sys.y, rows);
    }
    Vector residual = yb - matvec(hb, g);
    trace.residuals.push_back(norm(residual));
    g += matvec_t(hb, factors[b]->solve(residual));
    trace.blocks.push_back(b);
    if (g_star) trace.errors.push_back(norm(g - *g_star));
    trace.iterates.push_back(g);
  }
  return trace;
}

Matrix projection_matrix(const Matrix& h_block, double lambda) {
  require_positive_lambda(lambda, "projection_matrix");
  const std::size_t b = h_block.rows(), p = h_block.cols();
  Cholesky chol(damped_gram(h_block, lambda));
  // X = (lambda I + H H^T)^{-1} H, column by column.
  Matrix x(b, p);
  Vector col(b);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < b; ++i) col[i] = h_block(i, j);
    Vector s = chol.solve(col);
    for (std::size_t i = 0; i < b; ++i) x(i, j) = s[i];
  }
  Matrix out = matmul(h_block.transpose(), x);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  }
  return out;
}

double estimate_mu(const Matrix& h, double lambda, const BlockPartition& partition,
                   std::size_t n_samples, std::uint64_t seed) {
  if (partition.size() > kExactEnumerationLimit) {
    return estimate_mu_monte_carlo(h, lambda, partition, n_samples, seed);
  }
  partition.validate(h.rows());
  std::vector<std::size_t> all(partition.size());
  std::iota(all.begin(), all.end(), 0);
  return symmetric_eigenvalues(projection_sum(h, lambda, partition, all)).front();
}

double estimate_mu_monte_carlo(const Matrix& h, double lambda, const BlockPartition& partition,
                               std::size_t n_samples, std::uint64_t seed) {
  partition.validate(h.rows());
  if (n_samples == 0) throw ConfigError("estimate_mu: n_samples must be positive");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picks(n_samples);
  for (auto& b : picks) b = uniform_index(rng, partition.size());
  return symmetric_eigenvalues(projection_sum(h, lambda, partition, picks)).front();
}

double estimate_noise_eta2(const Matrix& h, double lambda, const BlockPartition& partition,
                           double noise_std, std::size_t n_samples, std::uint64_t seed) {
  partition.validate(h.rows());
  if (n_samples == 0) throw ConfigError("estimate_noise_eta2: n_samples must be positive");
  if (noise_std == 0.0) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise_std);
  std::vector<std::optional<Matrix>> h_blocks(partition.size());
  std::vector<std::optional<Cholesky>> factors(partition.size());
  double total = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t b = uniform_index(rng, partition.size());
    if (!h_blocks[b]) {
      h_blocks[b] = select_rows(h, partition.blocks[b]);
      factors[b].emplace(damped_gram(*h_blocks[b], lambda));
    }
    Vector xi(h_blocks[b]->rows());
    for (auto& v : xi) v = normal(rng);
    const Vector d = matvec_t(*h_blocks[b], factors[b]->solve(xi));
    total += dot(d, d);
  }
  return total / static_cast<double>(n_samples);
}

CgResult cg_normal_equations(const DampedSystem& sys, std::size_t max_iter, double tol) {
  sys.validate();
  const auto apply = [&](const Vector& v) {
    Vector out = matvec_t(sys.h, matvec(sys.h, v));
    axpy(sys.lambda, v.span(), out.span());
    return out;
  };
  const Vector b = matvec_t(sys.h, sys.y);
  const double threshold = tol * norm(b);
  CgResult res{Vector(sys.h.cols()), 0, norm(b), false};
  Vector r = b;
  Vector d = r;
  double rr = dot(r, r);
  if (std::sqrt(rr) <= threshold) {
    res.converged = true;
    return res;
  }
  for (std::size_t k = 0; k < max_iter; ++k) {
    const Vector ad = apply(d);
    const double alpha = rr / dot(d, ad);
    axpy(alpha, d.span(), res.g.span());
    axpy(-alpha, ad.span(), r.span());
    const double rr_next = dot(r, r);
    res.iterations = k + 1;
    res.residual_norm = std::sqrt(rr_next);
    if (res.residual_norm <= threshold) {
      res.converged = true;
      break;
    }
    const double beta = rr_next / rr;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = r[i] + beta * d[i];
    rr = rr_next;
  }
  return res;
}

}  // namespace rat
