#include "doctest.h"
#include "test_util.hpp"

#include "pinflow/baselines.hpp"
#include "pinflow/metrics.hpp"
#include "pinflow/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

using namespace pinflow;
using testutil::gaussian_task;
using testutil::sample_mean;
using testutil::sample_var;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

ScoreFunction gaussian_score(Vec mean, Vec var) {
  return [mean, var](const Mat& x) {
    Mat s = x;
    s.colwise() -= mean;
    return Mat(-(s.array().colwise() / var.array()));
  };
}

}  // namespace

TEST_CASE("median heuristic") {
  // Particles 0, 1, 3 have pairwise distances {1, 3, 2}.
  Mat x(1, 3);
  x << 0.0, 1.0, 3.0;
  CHECK(median_pairwise_distance(x) == 2.0);
  CHECK(median_bandwidth(x) == doctest::Approx(4.0 / std::log(3.0)).epsilon(1e-15));

  Mat four(1, 4);
  four << 0.0, 1.0, 3.0, 7.0;  // distances 1 2 3 4 6 7
  CHECK(median_pairwise_distance(four) == 3.5);

  CHECK(median_bandwidth(Mat::Zero(2, 1)) == 1.0);
  CHECK(median_bandwidth(Mat::Zero(2, 5)) == 1e-8);
  CHECK_THROWS_AS(median_pairwise_distance(Mat::Zero(2, 1)), std::invalid_argument);
}

TEST_CASE("single particle follows the score") {
  Mat x(2, 1);
  x << 0.3, -1.2;
  Mat s(2, 1);
  s << 1.5, 0.25;
  CHECK(stein_direction(x, s, median_bandwidth(x)) == s);
  CHECK(stein_repulsion(x, 1.0).isZero(0.0));
}

TEST_CASE("repulsion is antisymmetric between pairs") {
  Mat pair(2, 2);
  pair << 0.0, 0.4, 1.0, -0.3;
  const Mat r = stein_repulsion(pair, 0.7);
  CHECK((r.col(0) + r.col(1)).norm() < 1e-15);
  CHECK(r.col(0).dot(pair.col(0) - pair.col(1)) > 0.0);

  const Mat cloud = sample(DiagGaussian(Vec::Zero(3), Vec::Ones(3)), 40, 2).particles;
  const Mat rc = stein_repulsion(cloud, median_bandwidth(cloud));
  CHECK(rc.rowwise().sum().norm() < 1e-13 * rc.norm());
}

TEST_CASE("stationary two-particle configuration") {
  // For N(0, 1) and particles at +-a the median heuristic gives k = 1/2 and
  // the Stein direction vanishes when a^2 = ln 2.
  const double a = std::sqrt(std::log(2.0));
  Mat x(1, 2);
  x << -a, a;
  const ScoreFunction score = gaussian_score(Vec::Zero(1), Vec::Ones(1));
  const Mat phi = stein_direction(x, score(x), median_bandwidth(x));
  CHECK(phi.norm() < 1e-12);

  SvgdConfig c;
  c.iterations = 200;
  const Ensemble out = svgd(score, Ensemble{x, 0.0}, c);
  CHECK((out.particles - x).norm() < 1e-8);
}

TEST_CASE("SVGD recovers 2D Gaussian moments") {
  Vec mean(2), var(2);
  mean << 1.0, -2.0;
  var << 0.5, 2.0;
  // Start wider than the target in both coordinates.
  const Mat init = sample(DiagGaussian(Vec::Zero(2), Vec::Constant(2, 4.0)), 500, 4).particles;
  SvgdConfig c;
  c.n_particles = 500;
  const Ensemble out = svgd(gaussian_score(mean, var), Ensemble{init, 0.0}, c);
  for (int j = 0; j < 2; ++j) {
    CHECK(std::abs(sample_mean(out.particles, j) - mean[j]) < 0.05);
    CHECK(std::abs(sample_var(out.particles, j) / var[j] - 1.0) < 0.10);
  }
}

TEST_CASE("SVGD on a task is deterministic and validates its config") {
  const Task t = gen_gmm4d(1, 3).front();
  SvgdConfig c;
  c.n_particles = 50;
  c.iterations = 20;
  CHECK(svgd(t, c, 5).particles == svgd(t, c, 5).particles);
  CHECK(svgd(t, c, 5).particles != svgd(t, c, 6).particles);
  c.iterations = 0;
  CHECK_THROWS_AS(svgd(t, c, 5), std::invalid_argument);
}

TEST_CASE("MALA leaves the standard normal invariant") {
  const LogTarget target = [](const Vec& x, Vec* g) {
    if (g) *g = -x;
    return -0.5 * x.squaredNorm();
  };
  const int n = 100000;
  // Overdispersed start, burn-in, one draw per chain.
  const Mat start = sample(DiagGaussian(Vec::Zero(1), Vec::Constant(1, 4.0)), n, 8).particles;
  double acc = 0.0;
  const Mat x = mala_run(target, start, 200, 1.0, 9, &acc);
  CHECK(acc > 0.5);
  std::vector<double> v(x.data(), x.data() + n);
  std::sort(v.begin(), v.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = normal_cdf(v[i]);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
  }
  CHECK(ks < 0.01);
}

TEST_CASE("untempered stage samples the prior") {
  const Task t = gaussian_task(0.5, 0.04, 2.0, 1.0);
  const LogTarget prior_only = [&t](const Vec& x, Vec* g) {
    if (g) *g = score(t.prior, x);
    return log_density(t.prior, x);
  };
  const Mat x0 = sample(t.prior, 1500, 1).particles;
  const Mat x = mala_run(prior_only, x0, 5, 0.1, 2);
  // Monte Carlo tolerance: 4 standard errors.
  CHECK(std::abs(sample_mean(x) - 0.5) < 4.0 * std::sqrt(0.04 / 1500));
  CHECK(std::abs(sample_var(x) / 0.04 - 1.0) < 4.0 * std::sqrt(2.0 / 1499));
}

TEST_CASE("annealed MALA matches the Kalman posterior") {
  // Prior N(0, 0.04), likelihood N(0.3, 0.04): posterior N(0.15, 0.02).
  const Task t = gaussian_task(0.0, 0.04, 0.3, 0.04);
  AnnealConfig c;
  c.n_particles = 1500;
  Warnings w;
  const Ensemble e = annealed_mcmc(t, c, 11, &w);
  CHECK(std::abs(sample_mean(e.particles) - 0.15) < 0.05);
  CHECK(std::abs(sample_var(e.particles) / 0.02 - 1.0) < 0.10);
  CHECK(w.empty());
  CHECK(annealed_mcmc(t, c, 11).particles == e.particles);
  CHECK(annealed_mcmc(t, c, 12).particles != e.particles);
}

TEST_CASE("low acceptance is reported") {
  const Task t = gaussian_task(0.0, 1.0, 0.3, 1e-8);
  AnnealConfig c;
  c.n_particles = 200;
  Warnings w;
  annealed_mcmc(t, c, 3, &w);
  REQUIRE_FALSE(w.empty());
  CHECK(w.front().find("acceptance") != std::string::npos);
}

TEST_CASE("MALA rejects proposals the target cannot evaluate") {
  const Task t = gen_tdoa(1, 6).front();
  AnnealConfig c;
  c.n_particles = 300;
  const Ensemble e = annealed_mcmc(t, c, 4);
  CHECK(e.particles.allFinite());
  CHECK(e.particles.cols() == 300);

  const LogTarget half_line = [](const Vec& x, Vec* g) {
    if (x[0] < 0.0) throw std::domain_error("outside support");
    if (g) *g = Vec::Constant(1, -1.0);
    return -x[0];
  };
  const Mat x = mala_run(half_line, Mat::Constant(1, 500, 0.05), 50, 0.3, 1);
  CHECK(x.minCoeff() >= 0.0);
  CHECK_THROWS_AS(mala_run(half_line, Mat::Constant(1, 2, -1.0), 1, 0.3, 1), ParticleError);
}
