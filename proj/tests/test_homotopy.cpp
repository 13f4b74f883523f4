#include "doctest.h"
#include "test_util.hpp"

#include "pinflow/homotopy.hpp"
#include "pinflow/rng.hpp"
#include "pinflow/taskgen.hpp"
#include "pinflow/transporter.hpp"

#include <algorithm>
#include <cmath>

using namespace pinflow;
using testutil::rel_err;

namespace {

using testutil::gaussian_task;

FlowNetwork random_net(const FeatureLayout& layout, std::uint64_t seed, int hidden = 3, int width = 32) {
  return FlowNetwork::init(layout.network_widths(hidden, width), seed);
}

Mat features_at(const Task& task, const Mat& x, double lambda, const FeatureLayout& layout) {
  return build_features(task, x, lambda, layout, false).features();
}

Mat velocity_at(const Task& task, const FlowNetwork& net, const FeatureLayout& layout, const Mat& x, double lambda) {
  return net.forward(features_at(task, x, lambda, layout));
}

}  // namespace

TEST_CASE("feature widths") {
  CHECK(FeatureLayout{2, 1, true}.width() == 9);
  CHECK(FeatureLayout{4, 4, true}.width() == 18);
  CHECK(FeatureLayout{4, 4, false}.width() == 10);
  const Task gmm = gen_gmm4d(1, 3).front();
  CHECK(FeatureLayout::for_task(gmm).width() == 26);
  CHECK(FeatureLayout::for_task(gmm, false).width() == 18);
  const Task tdoa = gen_tdoa(1, 3).front();
  CHECK(FeatureLayout::for_task(tdoa).width() == 9);
  CHECK(FeatureLayout::for_task(tdoa).network_widths() == std::vector<int>{9, 64, 64, 64, 64, 64, 64, 2});
}

TEST_CASE("feature contents at lambda = 0") {
  const Task t = gen_gmm4d(1, 5).front();
  const FeatureLayout layout = FeatureLayout::for_task(t);
  const Mat x = sample(t.prior, 10, 1).particles;
  const FeatureBatch b = build_features(t, x, 0.0, layout);
  for (int i = 0; i < 10; ++i) {
    CHECK(b.score_p.col(i) == score(t.prior, x.col(i)));
    CHECK(b.features().col(i).segment(layout.score_p_offset(), 4) == score(t.prior, x.col(i)));
    CHECK(b.features()(layout.lambda_offset(), i) == 0.0);
    CHECK(b.features().col(i).segment(layout.z_offset(), t.z.size()) == t.z);
  }
}

TEST_CASE("feature tangents match finite differences of the feature map") {
  for (const Task& t : {gen_gmm4d(1, 7).front(), gen_tdoa(1, 7).front(), gen_gauss1d(1, 7).front()}) {
    const FeatureLayout layout = FeatureLayout::for_task(t);
    const Mat x = sample(t.prior, 6, 2).particles;
    const double lambda = 0.37;
    const FeatureBatch b = build_features(t, x, lambda, layout);
    const int d = layout.state_dim;
    for (int j = 0; j < d; ++j) {
      Mat xp = x, xm = x;
      const double eps = 1e-5;
      xp.row(j).array() += eps;
      xm.row(j).array() -= eps;
      const Mat fd = (features_at(t, xp, lambda, layout) - features_at(t, xm, lambda, layout)) / (2.0 * eps);
      const Mat tangent = b.stacked.middleCols(b.n * (1 + j), b.n);
      for (int i = 0; i < 6; ++i) CHECK(rel_err(Vec(tangent.col(i)), Vec(fd.col(i)), 1e-3) < 1e-5);
    }
  }
}

TEST_CASE("divergence through the feature map matches finite differences") {
  double worst = 0.0;
  int checked = 0;
  for (const Task& t : {gen_gmm4d(4, 9)[0], gen_gmm4d(4, 9)[1], gen_tdoa(4, 9)[0], gen_tdoa(4, 9)[1],
                        gen_gauss1d(2, 9)[0]}) {
    const FeatureLayout layout = FeatureLayout::for_task(t);
    const FlowNetwork net = random_net(layout, 17, 6, 64);
    const Mat x = sample(t.prior, 200, 3).particles;
    const double lambda = 0.6;
    const FieldEvaluation field = evaluate_network_field(net, build_features(t, x, lambda, layout));
    Vec fd = Vec::Zero(x.cols());
    const double eps = 1e-5;
    for (int j = 0; j < layout.state_dim; ++j) {
      Mat xp = x, xm = x;
      xp.row(j).array() += eps;
      xm.row(j).array() -= eps;
      fd += ((velocity_at(t, net, layout, xp, lambda) - velocity_at(t, net, layout, xm, lambda)).row(j) / (2.0 * eps))
                .transpose();
    }
    worst = std::max(worst, rel_err(field.divergence, fd, 1e-3));
    checked += static_cast<int>(x.cols());
  }
  CHECK(checked == 1000);
  CHECK(worst < 1e-5);
}

TEST_CASE("step loss gradient matches finite differences") {
  Rng rng(19);
  double worst = 0.0;
  for (int batch = 0; batch < 10; ++batch) {
    const Task t = batch % 2 ? gen_tdoa(1, 100 + batch).front() : gen_gmm4d(1, 100 + batch).front();
    const FeatureLayout layout = FeatureLayout::for_task(t);
    const FlowNetwork net = random_net(layout, 200 + batch, 6, 64);
    const Mat x = sample(t.prior, 32, 300 + batch).particles;
    const double lambda = rng.uniform();
    const StepGradient g = step_loss_gradient(t, net, layout, x, lambda);
    CHECK(g.loss == doctest::Approx(step_loss(t, net, layout, Ensemble{x, lambda})).epsilon(1e-12));
    for (int p = 0; p < 20; ++p) {
      const std::size_t idx = rng.below(g.grads.size());
      const double fd = testutil::fd5(
          [&](double h) {
            FlowNetwork moved = net;
            moved.params().at(idx) += h;
            return step_loss(t, moved, layout, Ensemble{x, lambda});
          },
          1e-4);
      worst = std::max(worst, rel_err(g.grads.at(idx), fd, 1e-3));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("residual degenerate cases") {
  // Constant likelihood and a zero network: both sides vanish.
  Task t = gaussian_task(0.0, 2.0, 0.0, 1.0);
  const FeatureLayout layout = FeatureLayout::for_task(t);
  const FlowNetwork zero = FlowNetwork::zeros(layout.network_widths());
  FieldEvaluation none{Mat::Zero(1, 5), Vec::Zero(5)};
  const Vec r = residual_terms(Vec::Constant(5, -3.25), Mat::Ones(1, 5), none);
  CHECK(r.cwiseAbs().maxCoeff() == 0.0);

  const Ensemble e = sample(t.prior, 50, 4);
  CHECK(mass_conservation_check(t, zero, layout, e) == 0.0);
  // Driving term alone is centered.
  const Vec driving = residual(t, zero, layout, e);
  CHECK(std::abs(driving.mean()) < 1e-12 * driving.cwiseAbs().maxCoeff());

  // Additive constants in log h cancel.
  const FeatureBatch b = build_features(t, e.particles, 0.3, layout);
  const FlowNetwork net = random_net(layout, 5);
  const FieldEvaluation f = evaluate_network_field(net, b);
  const Vec r1 = residual_terms(b.log_h, b.score_p, f);
  const Vec r2 = residual_terms((b.log_h.array() + 123.0).matrix(), b.score_p, f);
  CHECK((r1 - r2).cwiseAbs().maxCoeff() < 1e-10);

  CHECK(residual_terms(Vec::Zero(2), Mat::Zero(1, 2), FieldEvaluation{Mat::Zero(1, 2), Vec::Zero(2)}).squaredNorm() ==
        0.0);
  const Vec pm = (Vec(2) << 1.0, -1.0).finished();
  CHECK(pm.squaredNorm() / 2.0 == 1.0);
}

TEST_CASE("closed-form 1D flow satisfies the master equation on Gauss-Hermite nodes") {
  Vec nodes, weights;
  gauss_hermite(100, nodes, weights);
  CHECK(weights.sum() == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(nodes.cwiseProduct(nodes).dot(weights) == doctest::Approx(1.0).epsilon(1e-12));

  const std::vector<Task> tasks = gen_gauss1d(20, 77);
  double worst = 0.0;
  for (const Task& t : tasks) {
    const GaussianFlow1d flow(t.prior, t.likelihood);
    for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const double m = flow.intermediate_mean(lambda);
      const double s = std::sqrt(flow.intermediate_variance(lambda));
      const Mat x = (m + s * nodes.array()).matrix().transpose();
      const FieldEvaluation f = flow.evaluate(x, lambda);
      const FeatureBatch b = build_features(t, x, lambda, FeatureLayout::for_task(t), false);
      const Vec r = residual_terms(b.log_h, b.score_p, f, std::span<const double>(weights.data(), weights.size()));
      worst = std::max(worst, r.cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < x.cols(); i += 17)
        CHECK(oracle_flow_1d(t.prior, t.likelihood, x(0, i), lambda) == doctest::Approx(f.velocity(0, i)).epsilon(1e-12));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("closed-form 1D flow: symmetry, ordering and the Kalman endpoint") {
  const Task same = gaussian_task(0.5, 2.0, 0.5, 2.0);
  const GaussianFlow1d sym(same.prior, same.likelihood);
  for (double lambda : {0.0, 0.3, 1.0}) {
    CHECK(sym.intermediate_mean(lambda) == doctest::Approx(0.5));
    CHECK(std::abs(sym.velocity(0.5, lambda)) < 1e-15);
  }

  const Task t = gaussian_task(0.0, 4.0, 2.0, 1.0);
  const GaussianFlow1d flow(t.prior, t.likelihood);
  const VelocityField field = [&](const Mat& x, double lambda) { return Mat(flow.evaluate(x, lambda).velocity); };

  Ensemble sorted = sample(t.prior, 100, 8);
  std::sort(sorted.particles.data(), sorted.particles.data() + 100);
  const TransportResult r = transport_fixed(field, sorted, 0.01, nullptr, true);
  for (const Mat& state : r.trajectory)
    for (int i = 1; i < 100; ++i) CHECK(state(0, i - 1) < state(0, i));

  const TransportResult k = transport_fixed(field, sample(t.prior, 10000, 9), 0.001);
  const double mean = testutil::sample_mean(k.ensemble.particles);
  const double var = testutil::sample_var(k.ensemble.particles);
  CHECK(std::abs(mean - 1.6) < 0.02);
  CHECK(std::abs(var - 0.8) < 0.03);
}
