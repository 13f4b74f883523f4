#pragma once

#include "pinflow/core.hpp"
#include "pinflow/neuralflow.hpp"
#include "pinflow/task.hpp"

#include <span>

namespace pinflow {

/// Column layout of the network input:
/// [x (d), lambda (1), z (n_z), log h (1), grad log p_lambda (d), grad log h (d)].
/// The two gradient blocks are absent when `with_gradients` is false.
struct FeatureLayout {
  int state_dim = 1;
  int measurement_dim = 1;
  bool with_gradients = true;

  static FeatureLayout for_task(const Task& task, bool with_gradients = true);

  int width() const { return (with_gradients ? 3 : 1) * state_dim + measurement_dim + 2; }
  int lambda_offset() const { return state_dim; }
  int z_offset() const { return state_dim + 1; }
  int log_h_offset() const { return state_dim + 1 + measurement_dim; }
  int score_p_offset() const { return state_dim + 2 + measurement_dim; }
  int score_h_offset() const { return 2 * state_dim + 2 + measurement_dim; }

  /// Hidden layers of `hidden_width` between this input and a d-wide output.
  std::vector<int> network_widths(int hidden_layers = 6, int hidden_width = 64) const;

  CheckpointInfo checkpoint_info() const;
  static FeatureLayout from_checkpoint(const FlowNetwork& net, const CheckpointInfo& info);
  void check_compatible(const FlowNetwork& net) const;
};

/// Network inputs for a particle batch. `stacked` holds the features of all
/// N particles followed by d tangent blocks; tangent block j is dc/dx_j.
struct FeatureBatch {
  Eigen::Index n = 0;
  int d = 0;
  Mat stacked;
  Vec log_h;
  Mat score_p;  // d x N
  Mat score_h;  // d x N

  auto features() const { return stacked.leftCols(n); }
};

/// Builds features (and, when `with_tangents`, their position derivatives,
/// which need Hessians of log g and log h).
FeatureBatch build_features(const Task& task, const MatRef& particles, double lambda,
                            const FeatureLayout& layout, bool with_tangents = true);

/// Velocity and its divergence w.r.t. particle position.
struct FieldEvaluation {
  Mat velocity;    // d x N
  Vec divergence;  // N
};

/// Exact divergence through the full feature map via d forward-mode passes.
FieldEvaluation evaluate_network_field(const FlowNetwork& net, const FeatureBatch& batch);

/// R_i = [log h_i - E log h] + div f_i + f_i . grad log p_lambda_i, where the
/// expectation is the (optionally weighted) batch mean.
Vec residual_terms(const Vec& log_h, const Mat& score_p, const FieldEvaluation& field,
                   std::span<const double> weights = {});

Vec residual(const Task& task, const FlowNetwork& net, const FeatureLayout& layout, const Ensemble& ensemble,
             std::span<const double> weights = {});

/// Mean of squared residuals.
double step_loss(const Task& task, const FlowNetwork& net, const FeatureLayout& layout, const Ensemble& ensemble);

struct StepGradient {
  double loss = 0.0;
  Parameters grads;  // of loss_scale * loss
  Mat velocity;      // d x N, for the Euler update
};

/// Step loss and its exact parameter gradient (reverse mode over the
/// primal+tangent network graph). Particle states are treated as constants.
StepGradient step_loss_gradient(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                                const MatRef& particles, double lambda, double loss_scale = 1.0);

/// Weighted mean of the transport term div f + f . grad log p_lambda, a Monte
/// Carlo estimate of the integral of div(p_lambda f). The centered driving
/// term contributes zero by construction.
double mass_conservation_check(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                               const Ensemble& ensemble, std::span<const double> weights = {});

/// Closed-form flow for a 1D Gaussian prior and Gaussian likelihood:
/// f = -(dF_lambda/dlambda) / p_lambda with F_lambda the intermediate cdf.
class GaussianFlow1d {
 public:
  /// Accepts DiagGaussian or single-component mixture models in 1D.
  GaussianFlow1d(const DensityModel& prior, const DensityModel& likelihood);

  double intermediate_mean(double lambda) const;
  double intermediate_variance(double lambda) const;
  double velocity(double x, double lambda) const;
  /// df/dx, constant in x for this family.
  double divergence(double x, double lambda) const;

  FieldEvaluation evaluate(const MatRef& particles, double lambda) const;

 private:
  double prior_mean_, prior_precision_;
  double lik_mean_, lik_precision_;
};

double oracle_flow_1d(const DensityModel& prior, const DensityModel& likelihood, double x, double lambda);

/// Probabilists' Gauss-Hermite rule for N(0,1): nodes and normalized weights.
void gauss_hermite(int n, Vec& nodes, Vec& weights);

}  // namespace pinflow
