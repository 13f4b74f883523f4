#include "pinflow/densities.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pinflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void check_input(VecRef x, Eigen::Index expected) {
  if (x.size() != expected) {
    std::ostringstream msg;
    msg << "dimension mismatch: expected " << expected << ", got " << x.size();
    throw std::invalid_argument(msg.str());
  }
  if (!x.allFinite()) throw std::domain_error("non-finite state");
}

double log_sum_exp(const std::vector<double>& terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - top);
  return top + std::log(acc);
}

}  // namespace

// ---------------------------------------------------------------- DiagGaussian

DiagGaussian::DiagGaussian(Vec mean, Vec variances)
    : mean_(std::move(mean)), variances_(std::move(variances)) {
  if (mean_.size() == 0 || mean_.size() != variances_.size())
    throw std::invalid_argument("DiagGaussian: mean and variances must have equal nonzero size");
  if (!mean_.allFinite() || !variances_.allFinite() || (variances_.array() <= 0.0).any())
    throw std::invalid_argument("DiagGaussian: variances must be finite and strictly positive");
  log_norm_ = -0.5 * (static_cast<double>(dim()) * kLog2Pi + variances_.array().log().sum());
}

double DiagGaussian::log_density(VecRef x) const {
  check_input(x, dim());
  return log_norm_ - 0.5 * ((x - mean_).array().square() / variances_.array()).sum();
}

Vec DiagGaussian::score(VecRef x) const {
  check_input(x, dim());
  return -((x - mean_).array() / variances_.array()).matrix();
}

LocalExpansion DiagGaussian::expand(VecRef x) const {
  check_input(x, dim());
  LocalExpansion out;
  const Eigen::ArrayXd delta = (x - mean_).array();
  out.value = log_norm_ - 0.5 * (delta.square() / variances_.array()).sum();
  out.gradient = -(delta / variances_.array()).matrix();
  out.hessian = (-variances_.array().inverse()).matrix().asDiagonal();
  return out;
}

Vec DiagGaussian::draw(Rng& rng) const {
  Vec x(dim());
  for (Eigen::Index i = 0; i < dim(); ++i) x[i] = mean_[i] + std::sqrt(variances_[i]) * rng.normal();
  return x;
}

// ------------------------------------------------------------- GaussianMixture

GaussianMixture::GaussianMixture(std::vector<double> weights, std::vector<DiagGaussian> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (components_.empty() || weights_.size() != components_.size())
    throw std::invalid_argument("GaussianMixture: need one weight per component");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("GaussianMixture: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  for (const auto& c : components_)
    if (c.dim() != components_.front().dim())
      throw std::invalid_argument("GaussianMixture: components differ in dimension");
  log_weights_.reserve(weights_.size());
  for (double w : weights_) log_weights_.push_back(std::log(w));
}

double GaussianMixture::log_density(VecRef x) const {
  check_input(x, dim());
  std::vector<double> terms(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k)
    terms[k] = log_weights_[k] + components_[k].log_density(x);
  return log_sum_exp(terms);
}

Vec GaussianMixture::responsibilities(VecRef x) const {
  check_input(x, dim());
  std::vector<double> terms(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k)
    terms[k] = log_weights_[k] + components_[k].log_density(x);
  const double total = log_sum_exp(terms);
  Vec r(static_cast<Eigen::Index>(terms.size()));
  for (std::size_t k = 0; k < terms.size(); ++k) r[static_cast<Eigen::Index>(k)] = std::exp(terms[k] - total);
  return r;
}

Vec GaussianMixture::score(VecRef x) const {
  const Vec r = responsibilities(x);
  Vec g = Vec::Zero(dim());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const double rk = r[static_cast<Eigen::Index>(k)];
    if (rk == 0.0) continue;
    g += rk * components_[k].score(x);
  }
  return g;
}

LocalExpansion GaussianMixture::expand(VecRef x) const {
  check_input(x, dim());
  const Eigen::Index d = dim();
  std::vector<double> terms(components_.size());
  std::vector<LocalExpansion> parts;
  parts.reserve(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    parts.push_back(components_[k].expand(x));
    terms[k] = log_weights_[k] + parts.back().value;
  }
  LocalExpansion out;
  out.value = log_sum_exp(terms);
  out.gradient = Vec::Zero(d);
  out.hessian = Mat::Zero(d, d);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const double rk = std::exp(terms[k] - out.value);
    if (rk == 0.0) continue;
    out.gradient += rk * parts[k].gradient;
    out.hessian += rk * (parts[k].hessian + parts[k].gradient * parts[k].gradient.transpose());
  }
  out.hessian -= out.gradient * out.gradient.transpose();
  return out;
}

Vec GaussianMixture::draw(Rng& rng) const {
  double u = rng.uniform();
  std::size_t k = 0;
  for (; k + 1 < weights_.size(); ++k) {
    if (u < weights_[k]) break;
    u -= weights_[k];
  }
  // Skip zero-weight tails that rounding could land on.
  while (weights_[k] == 0.0 && k > 0) --k;
  return components_[k].draw(rng);
}

// -------------------------------------------------------------- TdoaLikelihood

TdoaLikelihood::TdoaLikelihood(Eigen::Vector2d sensor_a, Eigen::Vector2d sensor_b, double noise_std,
                               double measurement)
    : sensor_a_(sensor_a), sensor_b_(sensor_b), noise_std_(noise_std), measurement_(measurement) {
  if (!(noise_std_ > 0.0) || !std::isfinite(noise_std_))
    throw std::invalid_argument("TdoaLikelihood: noise_std must be positive");
  if ((sensor_a_ - sensor_b_).norm() == 0.0)
    throw std::invalid_argument("TdoaLikelihood: sensors must be distinct");
  if (!std::isfinite(measurement_)) throw std::invalid_argument("TdoaLikelihood: non-finite measurement");
}

double TdoaLikelihood::predict(VecRef x) const {
  check_input(x, 2);
  return (x - sensor_a_).norm() - (x - sensor_b_).norm();
}

double TdoaLikelihood::log_density(VecRef x) const {
  const double r = measurement_ - predict(x);
  const double var = noise_std_ * noise_std_;
  return -0.5 * (kLog2Pi + std::log(var)) - 0.5 * r * r / var;
}

double TdoaLikelihood::sensor_clearance(VecRef x) const {
  return std::min((x - sensor_a_).norm(), (x - sensor_b_).norm());
}

Vec TdoaLikelihood::score(VecRef x) const { return expand(x).gradient; }

LocalExpansion TdoaLikelihood::expand(VecRef x) const {
  check_input(x, 2);
  const Eigen::Vector2d da = x - sensor_a_;
  const Eigen::Vector2d db = x - sensor_b_;
  const double ra = da.norm();
  const double rb = db.norm();
  if (ra < kSingularRadius || rb < kSingularRadius)
    throw std::domain_error("TdoaLikelihood: score undefined at a sensor position");
  const Eigen::Vector2d ua = da / ra;
  const Eigen::Vector2d ub = db / rb;
  const double var = noise_std_ * noise_std_;
  const double resid = measurement_ - (ra - rb);
  const Eigen::Vector2d grad_h = ua - ub;
  const Eigen::Matrix2d eye = Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d hess_h = (eye - ua * ua.transpose()) / ra - (eye - ub * ub.transpose()) / rb;

  LocalExpansion out;
  out.value = -0.5 * (kLog2Pi + std::log(var)) - 0.5 * resid * resid / var;
  out.gradient = (resid / var) * grad_h;
  out.hessian = (resid / var) * hess_h - (grad_h * grad_h.transpose()) / var;
  return out;
}

// ---------------------------------------------------------------- dispatchers

Eigen::Index dim(const DensityModel& model) {
  return std::visit([](const auto& m) { return m.dim(); }, model);
}

double log_density(const DensityModel& model, VecRef x) {
  return std::visit([&](const auto& m) { return m.log_density(x); }, model);
}

Vec score(const DensityModel& model, VecRef x) {
  return std::visit([&](const auto& m) { return m.score(x); }, model);
}

LocalExpansion expand(const DensityModel& model, VecRef x) {
  return std::visit([&](const auto& m) { return m.expand(x); }, model);
}

DualValue dual_eval(const DensityModel& model, VecRef x, VecRef direction) {
  if (direction.size() != x.size()) throw std::invalid_argument("dual_eval: direction dimension mismatch");
  LocalExpansion e = expand(model, x);
  return {e.value, e.hessian * direction};
}

Ensemble sample(const DensityModel& model, Eigen::Index n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample: n must be at least 1");
  return std::visit(
      [&](const auto& m) -> Ensemble {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, TdoaLikelihood>) {
          throw std::invalid_argument("sample: TDOA likelihood is not a samplable prior");
        } else {
          Ensemble out;
          out.particles.resize(m.dim(), n);
          for (Eigen::Index i = 0; i < n; ++i) out.particles.col(i) = m.draw(rng);
          return out;
        }
      },
      model);
}

Ensemble sample(const DensityModel& model, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  return sample(model, n, rng);
}

// ----------------------------------------------------------- HomotopyPotential

HomotopyPotential::HomotopyPotential(const DensityModel& prior, const DensityModel& likelihood,
                                     double lambda)
    : prior_(&prior), likelihood_(&likelihood), lambda_(lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("HomotopyPotential: lambda outside [0,1]");
  if (dim(prior) != dim(likelihood)) throw std::invalid_argument("HomotopyPotential: dimension mismatch");
}

double HomotopyPotential::log_density(VecRef x) const {
  return pinflow::log_density(*prior_, x) + lambda_ * pinflow::log_density(*likelihood_, x);
}

Vec HomotopyPotential::score(VecRef x) const {
  return pinflow::score(*prior_, x) + lambda_ * pinflow::score(*likelihood_, x);
}

LocalExpansion HomotopyPotential::expand(VecRef x) const {
  LocalExpansion g = pinflow::expand(*prior_, x);
  const LocalExpansion h = pinflow::expand(*likelihood_, x);
  g.value += lambda_ * h.value;
  g.gradient += lambda_ * h.gradient;
  g.hessian += lambda_ * h.hessian;
  return g;
}

DualValue HomotopyPotential::dual_eval(VecRef x, VecRef direction) const {
  if (direction.size() != x.size()) throw std::invalid_argument("dual_eval: direction dimension mismatch");
  const LocalExpansion e = expand(x);
  return {e.value, e.hessian * direction};
}

// --------------------------------------------------------- conjugate posterior

namespace {

struct Product {
  double log_evidence;
  DiagGaussian posterior;
};

Product multiply(const DiagGaussian& a, const DiagGaussian& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("conjugate_posterior: dimension mismatch");
  const Eigen::ArrayXd va = a.variances().array();
  const Eigen::ArrayXd vb = b.variances().array();
  const Eigen::ArrayXd precision = va.inverse() + vb.inverse();
  const Eigen::ArrayXd var = precision.inverse();
  const Eigen::ArrayXd mean = var * (a.mean().array() / va + b.mean().array() / vb);
  const Eigen::ArrayXd sum_var = va + vb;
  const Eigen::ArrayXd diff = a.mean().array() - b.mean().array();
  const double log_evidence =
      -0.5 * (static_cast<double>(a.dim()) * kLog2Pi + sum_var.log().sum() + (diff.square() / sum_var).sum());
  return {log_evidence, DiagGaussian(mean.matrix(), var.matrix())};
}

GaussianMixture renormalize(const std::vector<double>& log_weights, std::vector<DiagGaussian> comps) {
  const double total = log_sum_exp(log_weights);
  std::vector<double> w(log_weights.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = std::exp(log_weights[k] - total);
    sum += w[k];
  }
  for (double& v : w) v /= sum;
  return GaussianMixture(std::move(w), std::move(comps));
}

}  // namespace

GaussianMixture conjugate_posterior(const DiagGaussian& prior, const GaussianMixture& likelihood) {
  std::vector<double> log_w;
  std::vector<DiagGaussian> comps;
  for (std::size_t k = 0; k < likelihood.components().size(); ++k) {
    if (likelihood.weights()[k] == 0.0) continue;
    Product p = multiply(prior, likelihood.components()[k]);
    log_w.push_back(std::log(likelihood.weights()[k]) + p.log_evidence);
    comps.push_back(std::move(p.posterior));
  }
  return renormalize(log_w, std::move(comps));
}

GaussianMixture conjugate_posterior(const GaussianMixture& prior, const GaussianMixture& likelihood) {
  std::vector<double> log_w;
  std::vector<DiagGaussian> comps;
  for (std::size_t i = 0; i < prior.components().size(); ++i) {
    if (prior.weights()[i] == 0.0) continue;
    for (std::size_t k = 0; k < likelihood.components().size(); ++k) {
      if (likelihood.weights()[k] == 0.0) continue;
      Product p = multiply(prior.components()[i], likelihood.components()[k]);
      log_w.push_back(std::log(prior.weights()[i]) + std::log(likelihood.weights()[k]) + p.log_evidence);
      comps.push_back(std::move(p.posterior));
    }
  }
  return renormalize(log_w, std::move(comps));
}

// ---------------------------------------------------------------- grid sampler

namespace {

struct GridMass {
  std::vector<double> log_weights;  // per cell, row-major over (ix, iy)
  double log_total = 0.0;           // log of sum(weight) * cell area
};

GridMass evaluate_grid(const DiagGaussian& prior, const TdoaLikelihood& lik, const Eigen::Vector2d& lo,
                       const Eigen::Vector2d& cell, int nx, int ny) {
  GridMass g;
  g.log_weights.resize(static_cast<std::size_t>(nx) * ny);
  double top = -std::numeric_limits<double>::infinity();
  Eigen::Vector2d x;
  for (int ix = 0; ix < nx; ++ix) {
    x[0] = lo[0] + (ix + 0.5) * cell[0];
    for (int iy = 0; iy < ny; ++iy) {
      x[1] = lo[1] + (iy + 0.5) * cell[1];
      const double lw = prior.log_density(x) + lik.log_density(x);
      g.log_weights[static_cast<std::size_t>(ix) * ny + iy] = lw;
      top = std::max(top, lw);
    }
  }
  double acc = 0.0;
  for (double lw : g.log_weights) acc += std::exp(lw - top);
  g.log_total = top + std::log(acc) + std::log(cell[0] * cell[1]);
  return g;
}

}  // namespace

Ensemble grid_posterior_sample(const DiagGaussian& prior, const TdoaLikelihood& likelihood,
                               const GridSpec& grid, Eigen::Index n, std::uint64_t seed, Warnings* warnings) {
  if (prior.dim() != 2) throw std::invalid_argument("grid_posterior_sample: 2D state only");
  if (n < 1) throw std::invalid_argument("grid_posterior_sample: n must be at least 1");
  if (grid.cells_per_axis < 2 || !(grid.half_width_sigmas > 0.0))
    throw std::invalid_argument("grid_posterior_sample: invalid grid");

  const Eigen::Vector2d sigma = prior.variances().array().sqrt().matrix();
  const Eigen::Vector2d lo = prior.mean() - grid.half_width_sigmas * sigma;
  const Eigen::Vector2d cell = (2.0 * grid.half_width_sigmas * sigma) / grid.cells_per_axis;
  const int cells = grid.cells_per_axis;
  const GridMass mass = evaluate_grid(prior, likelihood, lo, cell, cells, cells);

  if (warnings != nullptr) {
    // Same cell size, 1.5x wider box.
    const int pad = cells / 4;
    const Eigen::Vector2d ref_lo = lo - pad * cell;
    const GridMass ref = evaluate_grid(prior, likelihood, ref_lo, cell, cells + 2 * pad, cells + 2 * pad);
    const double ratio = std::exp(mass.log_total - ref.log_total);
    if (ratio < 1.0 - 1e-3) {
      std::ostringstream msg;
      msg << "grid covers only " << ratio << " of the reference posterior mass";
      warnings->push_back(msg.str());
    }
  }

  const double top = *std::max_element(mass.log_weights.begin(), mass.log_weights.end());
  std::vector<double> cumulative(mass.log_weights.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < cumulative.size(); ++i) {
    acc += std::exp(mass.log_weights[i] - top);
    cumulative[i] = acc;
  }

  Rng rng(seed);
  Ensemble out;
  out.particles.resize(2, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const auto idx = static_cast<std::size_t>(it - cumulative.begin());
    const int ix = static_cast<int>(idx / cells);
    const int iy = static_cast<int>(idx % cells);
    const double jx = grid.jitter ? rng.uniform() : 0.5;
    const double jy = grid.jitter ? rng.uniform() : 0.5;
    out.particles(0, s) = lo[0] + (ix + jx) * cell[0];
    out.particles(1, s) = lo[1] + (iy + jy) * cell[1];
  }
  return out;
}

}  // namespace pinflow
