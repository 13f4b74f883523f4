#pragma once

#include "pinflow/core.hpp"
#include "pinflow/task.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace testutil {

using pinflow::Mat;
using pinflow::Vec;

/// Central-difference gradient of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double eps = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    g[i] = (f(xp) - f(xm)) / (2.0 * eps);
  }
  return g;
}

/// Central-difference Jacobian column along `v` of a vector function.
inline Vec fd_directional(const std::function<Vec(const Vec&)>& f, const Vec& x, const Vec& v, double eps = 1e-5) {
  return (f(x + eps * v) - f(x - eps * v)) / (2.0 * eps);
}

/// Fourth-order central difference of a scalar function of one variable.
inline double fd5(const std::function<double(double)>& f, double h) {
  return (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h);
}

/// |a - b| / max(|a|, |b|, floor), elementwise maximum.
inline double rel_err(const Vec& a, const Vec& b, double floor = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double sample_mean(const Mat& x, Eigen::Index row = 0) { return x.row(row).mean(); }

inline double sample_var(const Mat& x, Eigen::Index row = 0) {
  const double m = x.row(row).mean();
  return (x.row(row).array() - m).square().sum() / static_cast<double>(x.cols() - 1);
}

/// 1D task with prior N(m0, v0) and likelihood N(x; m1, v1), conjugate truth.
inline pinflow::Task gaussian_task(double m0, double v0, double m1, double v1, std::string id = "g") {
  using namespace pinflow;
  DiagGaussian prior(Vec::Constant(1, m0), Vec::Constant(1, v0));
  GaussianMixture lik({1.0}, {DiagGaussian(Vec::Constant(1, m1), Vec::Constant(1, v1))});
  GroundTruth truth = conjugate_posterior(prior, lik);
  return Task{std::move(id), Family::gauss1d, prior, lik, Vec::Constant(1, m1), std::move(truth)};
}

}  // namespace testutil
