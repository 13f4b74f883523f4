#pragma once

#include "pinflow/core.hpp"
#include "pinflow/rng.hpp"

#include <cstdint>
#include <variant>
#include <vector>

namespace pinflow {

/// Value, gradient and Hessian of a log-density at one point.
struct LocalExpansion {
  double value = 0.0;
  Vec gradient;
  Mat hessian;
};

/// Result of a dual evaluation: log-density and the score's derivative
/// along a direction (Hessian-vector product).
struct DualValue {
  double value = 0.0;
  Vec score_derivative;
};

class DiagGaussian {
 public:
  DiagGaussian(Vec mean, Vec variances);

  Eigen::Index dim() const { return mean_.size(); }
  const Vec& mean() const { return mean_; }
  const Vec& variances() const { return variances_; }

  double log_density(VecRef x) const;
  Vec score(VecRef x) const;
  LocalExpansion expand(VecRef x) const;
  Vec draw(Rng& rng) const;

 private:
  Vec mean_;
  Vec variances_;
  double log_norm_;
};

class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<DiagGaussian> components);

  Eigen::Index dim() const { return components_.front().dim(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<DiagGaussian>& components() const { return components_; }

  double log_density(VecRef x) const;
  Vec score(VecRef x) const;
  LocalExpansion expand(VecRef x) const;
  Vec draw(Rng& rng) const;

  /// Posterior component probabilities at x.
  Vec responsibilities(VecRef x) const;

 private:
  std::vector<double> weights_;
  std::vector<double> log_weights_;
  std::vector<DiagGaussian> components_;
};

/// Gaussian likelihood of a range-difference measurement between two
/// planar sensors: z ~ N(|x - a| - |x - b|, noise_std^2).
class TdoaLikelihood {
 public:
  static constexpr double kSingularRadius = 1e-6;

  TdoaLikelihood(Eigen::Vector2d sensor_a, Eigen::Vector2d sensor_b, double noise_std,
                 double measurement);

  Eigen::Index dim() const { return 2; }
  const Eigen::Vector2d& sensor_a() const { return sensor_a_; }
  const Eigen::Vector2d& sensor_b() const { return sensor_b_; }
  double noise_std() const { return noise_std_; }
  double measurement() const { return measurement_; }

  /// Noise-free range difference at x.
  double predict(VecRef x) const;

  double log_density(VecRef x) const;
  Vec score(VecRef x) const;
  LocalExpansion expand(VecRef x) const;

  /// Distance from x to the nearer sensor.
  double sensor_clearance(VecRef x) const;

 private:
  Eigen::Vector2d sensor_a_;
  Eigen::Vector2d sensor_b_;
  double noise_std_;
  double measurement_;
};

using DensityModel = std::variant<DiagGaussian, GaussianMixture, TdoaLikelihood>;

Eigen::Index dim(const DensityModel& model);
double log_density(const DensityModel& model, VecRef x);
Vec score(const DensityModel& model, VecRef x);
LocalExpansion expand(const DensityModel& model, VecRef x);
DualValue dual_eval(const DensityModel& model, VecRef x, VecRef direction);

/// n i.i.d. prior draws. Throws for likelihood-only models.
Ensemble sample(const DensityModel& model, Eigen::Index n, std::uint64_t seed);
Ensemble sample(const DensityModel& model, Eigen::Index n, Rng& rng);

/// Unnormalized log p_lambda = log g + lambda * log h.
class HomotopyPotential {
 public:
  HomotopyPotential(const DensityModel& prior, const DensityModel& likelihood, double lambda);

  double lambda() const { return lambda_; }

  double log_density(VecRef x) const;
  Vec score(VecRef x) const;
  LocalExpansion expand(VecRef x) const;
  DualValue dual_eval(VecRef x, VecRef direction) const;

 private:
  const DensityModel* prior_;
  const DensityModel* likelihood_;
  double lambda_;
};

/// Exact posterior of a diagonal Gaussian prior times a mixture likelihood
/// over the state.
GaussianMixture conjugate_posterior(const DiagGaussian& prior, const GaussianMixture& likelihood);
/// Mixture prior times mixture likelihood: one component per pair.
GaussianMixture conjugate_posterior(const GaussianMixture& prior, const GaussianMixture& likelihood);

struct GridSpec {
  int cells_per_axis = 512;
  double half_width_sigmas = 6.0;
  bool jitter = true;
};

/// Draws from the posterior discretized on a regular grid around the prior.
/// Emits a coverage warning when the grid misses more than 1e-3 of the mass
/// found on a wider reference grid.
Ensemble grid_posterior_sample(const DiagGaussian& prior, const TdoaLikelihood& likelihood,
                               const GridSpec& grid, Eigen::Index n, std::uint64_t seed,
                               Warnings* warnings = nullptr);

}  // namespace pinflow
