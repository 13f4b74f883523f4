#include "pinflow/homotopy.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace pinflow {

// --------------------------------------------------------------- FeatureLayout

FeatureLayout FeatureLayout::for_task(const Task& task, bool with_gradients) {
  return {static_cast<int>(task.state_dim()), static_cast<int>(task.measurement_dim()), with_gradients};
}

std::vector<int> FeatureLayout::network_widths(int hidden_layers, int hidden_width) const {
  std::vector<int> widths{width()};
  for (int i = 0; i < hidden_layers; ++i) widths.push_back(hidden_width);
  widths.push_back(state_dim);
  return widths;
}

CheckpointInfo FeatureLayout::checkpoint_info() const {
  return {static_cast<std::uint32_t>(measurement_dim), with_gradients ? 1u : 0u};
}

FeatureLayout FeatureLayout::from_checkpoint(const FlowNetwork& net, const CheckpointInfo& info) {
  FeatureLayout layout{net.output_width(), static_cast<int>(info.measurement_dim), (info.feature_flags & 1u) != 0};
  layout.check_compatible(net);
  return layout;
}

void FeatureLayout::check_compatible(const FlowNetwork& net) const {
  if (net.input_width() != width() || net.output_width() != state_dim) {
    std::ostringstream msg;
    msg << "network (" << net.input_width() << " -> " << net.output_width() << ") does not match feature layout ("
        << width() << " -> " << state_dim << ")";
    throw std::invalid_argument(msg.str());
  }
}

// ------------------------------------------------------------------- features

FeatureBatch build_features(const Task& task, const MatRef& particles, double lambda, const FeatureLayout& layout,
                            bool with_tangents) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("build_features: lambda outside [0,1]");
  const int d = layout.state_dim;
  if (particles.rows() != d || task.state_dim() != d)
    throw std::invalid_argument("build_features: state dimension mismatch");
  if (task.measurement_dim() != layout.measurement_dim)
    throw std::invalid_argument("build_features: measurement dimension mismatch");

  const Eigen::Index n = particles.cols();
  const int tangents = with_tangents ? d : 0;
  FeatureBatch batch;
  batch.n = n;
  batch.d = d;
  batch.stacked = Mat::Zero(layout.width(), n * (1 + tangents));
  batch.log_h.resize(n);
  batch.score_p.resize(d, n);
  batch.score_h.resize(d, n);

  for (Eigen::Index i = 0; i < n; ++i) {
    LocalExpansion g, h;
    try {
      g = expand(task.prior, particles.col(i));
      h = expand(task.likelihood, particles.col(i));
    } catch (const std::domain_error& e) {
      throw ParticleError(std::string("task ") + task.id + ": " + e.what(), i);
    }
    if (!std::isfinite(h.value) || !h.gradient.allFinite())
      throw ParticleError("task " + task.id + ": non-finite log-likelihood", i);
    const Vec sp = g.gradient + lambda * h.gradient;
    batch.log_h[i] = h.value;
    batch.score_p.col(i) = sp;
    batch.score_h.col(i) = h.gradient;

    auto c = batch.stacked.col(i);
    c.head(d) = particles.col(i);
    c[layout.lambda_offset()] = lambda;
    c.segment(layout.z_offset(), layout.measurement_dim) = task.z;
    c[layout.log_h_offset()] = h.value;
    if (layout.with_gradients) {
      c.segment(layout.score_p_offset(), d) = sp;
      c.segment(layout.score_h_offset(), d) = h.gradient;
    }
    if (with_tangents) {
      const Mat hess_p = g.hessian + lambda * h.hessian;
      for (int j = 0; j < d; ++j) {
        auto t = batch.stacked.col(n * (1 + j) + i);
        t[j] = 1.0;
        t[layout.log_h_offset()] = h.gradient[j];
        if (layout.with_gradients) {
          t.segment(layout.score_p_offset(), d) = hess_p.col(j);
          t.segment(layout.score_h_offset(), d) = h.hessian.col(j);
        }
      }
    }
  }
  return batch;
}

FieldEvaluation evaluate_network_field(const FlowNetwork& net, const FeatureBatch& batch) {
  if (batch.stacked.cols() != batch.n * (1 + batch.d))
    throw std::invalid_argument("evaluate_network_field: feature batch lacks tangents");
  const DualTrace trace = net.forward_dual(batch.stacked, batch.d);
  FieldEvaluation out;
  out.velocity = trace.primal();
  out.divergence = Vec::Zero(batch.n);
  for (int j = 0; j < batch.d; ++j) out.divergence += trace.tangent(j).row(j).transpose();
  return out;
}

// ------------------------------------------------------------------ residual

namespace {

double weighted_mean(const Vec& values, std::span<const double> weights) {
  if (weights.empty()) return values.mean();
  if (static_cast<Eigen::Index>(weights.size()) != values.size())
    throw std::invalid_argument("weights must match the particle count");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) acc += weights[static_cast<std::size_t>(i)] * values[i];
  return acc;
}

void check_finite(const Vec& r, const char* what) {
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (!std::isfinite(r[i])) throw ParticleError(std::string("non-finite ") + what, i);
}

}  // namespace

Vec residual_terms(const Vec& log_h, const Mat& score_p, const FieldEvaluation& field,
                   std::span<const double> weights) {
  if (log_h.size() == 0) throw std::invalid_argument("residual: empty ensemble");
  const double expected = weighted_mean(log_h, weights);
  Vec r = (log_h.array() - expected).matrix() + field.divergence +
          field.velocity.cwiseProduct(score_p).colwise().sum().transpose();
  check_finite(r, "residual");
  return r;
}

Vec residual(const Task& task, const FlowNetwork& net, const FeatureLayout& layout, const Ensemble& ensemble,
             std::span<const double> weights) {
  layout.check_compatible(net);
  const FeatureBatch batch = build_features(task, ensemble.particles, ensemble.lambda, layout);
  return residual_terms(batch.log_h, batch.score_p, evaluate_network_field(net, batch), weights);
}

double step_loss(const Task& task, const FlowNetwork& net, const FeatureLayout& layout, const Ensemble& ensemble) {
  return residual(task, net, layout, ensemble).squaredNorm() / static_cast<double>(ensemble.size());
}

StepGradient step_loss_gradient(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                                const MatRef& particles, double lambda, double loss_scale) {
  layout.check_compatible(net);
  const FeatureBatch batch = build_features(task, particles, lambda, layout);
  const DualTrace trace = net.forward_dual(batch.stacked, batch.d);
  FieldEvaluation field;
  field.velocity = trace.primal();
  field.divergence = Vec::Zero(batch.n);
  for (int j = 0; j < batch.d; ++j) field.divergence += trace.tangent(j).row(j).transpose();
  const Vec r = residual_terms(batch.log_h, batch.score_p, field);

  const double n = static_cast<double>(batch.n);
  StepGradient out;
  out.loss = r.squaredNorm() / n;
  if (!std::isfinite(out.loss)) throw std::domain_error("task " + task.id + ": non-finite step loss");

  // dR_i/df_i = grad log p_lambda_i ; dR_i/d(df_j/dx_j) = 1.
  const Vec dr = (2.0 * loss_scale / n) * r;
  Mat output_grad = Mat::Zero(trace.output.rows(), trace.output.cols());
  output_grad.leftCols(batch.n) = batch.score_p * dr.asDiagonal();
  for (int j = 0; j < batch.d; ++j) output_grad.row(j).segment(batch.n * (1 + j), batch.n) = dr.transpose();
  out.grads = net.backward(trace, output_grad);
  out.velocity = field.velocity;
  return out;
}

double mass_conservation_check(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                               const Ensemble& ensemble, std::span<const double> weights) {
  layout.check_compatible(net);
  const FeatureBatch batch = build_features(task, ensemble.particles, ensemble.lambda, layout);
  const FieldEvaluation field = evaluate_network_field(net, batch);
  const Vec transport = field.divergence + field.velocity.cwiseProduct(batch.score_p).colwise().sum().transpose();
  return weighted_mean(transport, weights);
}

// ------------------------------------------------------------ 1D exact flow

namespace {

std::pair<double, double> gaussian_1d(const DensityModel& model) {
  const DiagGaussian* g = std::get_if<DiagGaussian>(&model);
  if (const auto* mix = std::get_if<GaussianMixture>(&model); mix != nullptr && mix->components().size() == 1)
    g = &mix->components().front();
  if (g == nullptr || g->dim() != 1) throw std::invalid_argument("1D exact flow needs 1D Gaussian densities");
  return {g->mean()[0], 1.0 / g->variances()[0]};
}

}  // namespace

GaussianFlow1d::GaussianFlow1d(const DensityModel& prior, const DensityModel& likelihood) {
  std::tie(prior_mean_, prior_precision_) = gaussian_1d(prior);
  std::tie(lik_mean_, lik_precision_) = gaussian_1d(likelihood);
}

double GaussianFlow1d::intermediate_mean(double lambda) const {
  const double tau = prior_precision_ + lambda * lik_precision_;
  return (prior_precision_ * prior_mean_ + lambda * lik_precision_ * lik_mean_) / tau;
}

double GaussianFlow1d::intermediate_variance(double lambda) const {
  return 1.0 / (prior_precision_ + lambda * lik_precision_);
}

double GaussianFlow1d::velocity(double x, double lambda) const {
  // F = Phi(u), u = (x - mu) sqrt(tau); p = phi(u) sqrt(tau), so the density
  // factor cancels and f = -(du/dlambda) / sqrt(tau).
  const double tau = prior_precision_ + lambda * lik_precision_;
  const double mu = intermediate_mean(lambda);
  const double root = std::sqrt(tau);
  const double dmu = lik_precision_ * (lik_mean_ - mu) / tau;
  const double du = -dmu * root + (x - mu) * lik_precision_ / (2.0 * root);
  return -du / root;
}

double GaussianFlow1d::divergence(double /*x*/, double lambda) const {
  return -lik_precision_ / (2.0 * (prior_precision_ + lambda * lik_precision_));
}

FieldEvaluation GaussianFlow1d::evaluate(const MatRef& particles, double lambda) const {
  if (particles.rows() != 1) throw std::invalid_argument("GaussianFlow1d: 1D particles expected");
  FieldEvaluation out;
  out.velocity.resize(1, particles.cols());
  out.divergence.resize(particles.cols());
  for (Eigen::Index i = 0; i < particles.cols(); ++i) {
    out.velocity(0, i) = velocity(particles(0, i), lambda);
    out.divergence[i] = divergence(particles(0, i), lambda);
  }
  return out;
}

double oracle_flow_1d(const DensityModel& prior, const DensityModel& likelihood, double x, double lambda) {
  return GaussianFlow1d(prior, likelihood).velocity(x, lambda);
}

void gauss_hermite(int n, Vec& nodes, Vec& weights) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: n must be positive");
  Mat jacobi = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k - 1, k) = jacobi(k, k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Mat> solver(jacobi);
  nodes = solver.eigenvalues();
  weights = solver.eigenvectors().row(0).transpose().array().square();
  weights /= weights.sum();
}

}  // namespace pinflow
