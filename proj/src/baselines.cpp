#include "pinflow/baselines.hpp"

#include "pinflow/parallel.hpp"
#include "pinflow/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pinflow {

void SvgdConfig::validate() const {
  if (n_particles < 1) throw std::invalid_argument("svgd: n_particles must be >= 1");
  if (iterations < 1) throw std::invalid_argument("svgd: iterations must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("svgd: learning_rate must be positive");
}

void AnnealConfig::validate() const {
  if (n_particles < 1) throw std::invalid_argument("anneal: n_particles must be >= 1");
  if (beta_steps < 1) throw std::invalid_argument("anneal: beta_steps must be >= 1");
  if (inner_iterations < 1) throw std::invalid_argument("anneal: inner_iterations must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("anneal: step_size must be positive");
}

// ------------------------------------------------------------------ SVGD

double median_pairwise_distance(const MatRef& x) {
  const Eigen::Index n = x.cols();
  if (n < 2) throw std::invalid_argument("median distance needs at least two particles");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) dist.push_back((x.col(i) - x.col(j)).norm());
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  const double upper = dist[mid];
  if (dist.size() % 2 == 1) return upper;
  const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

double median_bandwidth(const MatRef& particles, double floor) {
  if (particles.cols() < 2) return 1.0;
  const double m = median_pairwise_distance(particles);
  return std::max(floor, m * m / std::log(static_cast<double>(particles.cols())));
}

namespace {

Mat rbf_kernel(const MatRef& x, double h) {
  const Vec sq = x.colwise().squaredNorm().transpose();
  Mat k = x.transpose() * x;
  k *= -2.0;
  k.colwise() += sq;
  k.rowwise() += sq.transpose();
  // Exact zeros on the diagonal; clamp rounding noise elsewhere.
  for (Eigen::Index i = 0; i < k.rows(); ++i) k(i, i) = 0.0;
  return (-k.cwiseMax(0.0) / h).array().exp().matrix();
}

}  // namespace

Mat stein_repulsion(const MatRef& particles, double bandwidth) {
  const Mat k = rbf_kernel(particles, bandwidth);
  const Vec row_sums = k.rowwise().sum();
  const double n = static_cast<double>(particles.cols());
  return (2.0 / bandwidth) * (particles * row_sums.asDiagonal() - particles * k) / n;
}

Mat stein_direction(const MatRef& particles, const MatRef& scores, double bandwidth) {
  if (scores.rows() != particles.rows() || scores.cols() != particles.cols())
    throw std::invalid_argument("scores must match the particle matrix");
  const Mat k = rbf_kernel(particles, bandwidth);
  const Vec row_sums = k.rowwise().sum();
  const double n = static_cast<double>(particles.cols());
  return (scores * k + (2.0 / bandwidth) * (particles * row_sums.asDiagonal() - particles * k)) / n;
}

Ensemble svgd(const ScoreFunction& score, Ensemble initial, const SvgdConfig& config) {
  config.validate();
  Mat x = std::move(initial.particles);
  Mat history = Mat::Zero(x.rows(), x.cols());
  for (int it = 0; it < config.iterations; ++it) {
    const Mat s = score(x);
    if (!s.allFinite()) throw std::runtime_error("svgd: non-finite score at iteration " + std::to_string(it));
    const double h = median_bandwidth(x, config.bandwidth_floor);
    const Mat phi = stein_direction(x, s, h);
    history += phi.cwiseAbs2();
    x.array() += config.learning_rate * phi.array() / (config.adagrad_epsilon + history.array().sqrt());
  }
  return Ensemble{std::move(x), 1.0};
}

Ensemble svgd(const Task& task, const SvgdConfig& config, std::uint64_t seed) {
  Ensemble init = sample(task.prior, config.n_particles, seed);
  auto score_fn = [&task](const Mat& x) {
    Mat s(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) s.col(i) = score(task.prior, x.col(i)) + score(task.likelihood, x.col(i));
    return s;
  };
  return svgd(score_fn, std::move(init), config);
}

// ------------------------------------------------------------------ MALA

namespace {

// Returns false when the target cannot be evaluated at x.
bool eval_target(const LogTarget& target, const Vec& x, double& logp, Vec& grad) {
  try {
    logp = target(x, &grad);
  } catch (const std::domain_error&) {
    return false;
  }
  return std::isfinite(logp) && grad.allFinite();
}

}  // namespace

Mat mala_run(const LogTarget& target, Mat particles, int steps, double step_size, std::uint64_t seed,
             double* acceptance) {
  if (steps < 0) throw std::invalid_argument("mala: steps must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("mala: step_size must be positive");
  const Eigen::Index n = particles.cols();
  const Eigen::Index d = particles.rows();
  const double half_s2 = 0.5 * step_size * step_size;
  const double inv_2s2 = 1.0 / (2.0 * step_size * step_size);
  const Rng base(seed);

  std::vector<long> accepted(static_cast<std::size_t>(n), 0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    Rng rng = base.split(i);
    Vec x = particles.col(static_cast<Eigen::Index>(i));
    Vec g(d);
    double lp = 0.0;
    if (!eval_target(target, x, lp, g))
      throw ParticleError("mala: target not finite at the initial state", static_cast<Eigen::Index>(i));
    Vec xi(d);
    Vec gp(d);
    for (int t = 0; t < steps; ++t) {
      for (Eigen::Index j = 0; j < d; ++j) xi[j] = rng.normal();
      const Vec prop = x + half_s2 * g + step_size * xi;
      double lpp = 0.0;
      const bool ok = eval_target(target, prop, lpp, gp);
      const double u = rng.uniform();
      if (!ok) continue;
      const double fwd = (prop - x - half_s2 * g).squaredNorm() * inv_2s2;
      const double rev = (x - prop - half_s2 * gp).squaredNorm() * inv_2s2;
      const double log_alpha = lpp - lp - rev + fwd;
      if (std::log(u) < log_alpha) {
        x = prop;
        g = gp;
        lp = lpp;
        ++accepted[i];
      }
    }
    particles.col(static_cast<Eigen::Index>(i)) = x;
  });
  if (acceptance != nullptr) {
    const double total = static_cast<double>(n) * std::max(steps, 1);
    *acceptance = static_cast<double>(std::accumulate(accepted.begin(), accepted.end(), 0L)) / total;
  }
  return particles;
}

Ensemble annealed_mcmc(const Task& task, const AnnealConfig& config, std::uint64_t seed, Warnings* warnings) {
  config.validate();
  const Rng master(seed);
  Mat x = sample(task.prior, config.n_particles, master.split(0).key()).particles;
  for (int k = 1; k <= config.beta_steps; ++k) {
    const double beta = k == config.beta_steps ? 1.0 : static_cast<double>(k) / config.beta_steps;
    const LogTarget target = [&task, beta](const Vec& v, Vec* grad) {
      if (grad != nullptr) *grad = score(task.prior, v) + beta * score(task.likelihood, v);
      return log_density(task.prior, v) + beta * log_density(task.likelihood, v);
    };
    double rate = 0.0;
    x = mala_run(target, std::move(x), config.inner_iterations, config.step_size, master.split(k).key(), &rate);
    if (rate < 0.01 && warnings != nullptr) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "annealed-MALA: acceptance %.4f at beta = %.3f (step size mismatch)", rate, beta);
      warnings->emplace_back(buf);
    }
  }
  return Ensemble{std::move(x), 1.0};
}

}  // namespace pinflow
