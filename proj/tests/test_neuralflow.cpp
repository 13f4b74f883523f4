#include "doctest.h"
#include "test_util.hpp"

#include "pinflow/neuralflow.hpp"
#include "pinflow/rng.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace pinflow;
using testutil::rel_err;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.normal(0.0, scale);
  return m;
}

// Weighted sum of every output entry; its gradient w.r.t. the outputs is G.
double contract(const FlowNetwork& net, const Mat& stacked, int k, const Mat& g) {
  return net.forward_dual(stacked, k).output.cwiseProduct(g).sum();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("pinflow_test_" + name);
}

}  // namespace

TEST_CASE("init is deterministic, bias-free and bounded") {
  const std::vector<int> widths{9, 64, 64, 64, 64, 64, 64, 2};
  const FlowNetwork a = FlowNetwork::init(widths, 42);
  const FlowNetwork b = FlowNetwork::init(widths, 42);
  for (std::size_t l = 0; l < a.n_layers(); ++l) {
    CHECK(a.params().weights[l] == b.params().weights[l]);
    CHECK(a.params().biases[l].cwiseAbs().maxCoeff() == 0.0);
  }
  Rng rng(1);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const FlowNetwork n = FlowNetwork::init(widths, seed);
    Mat x(9, 1);
    for (int i = 0; i < 9; ++i) x(i, 0) = rng.uniform(-1.0, 1.0);
    CHECK(n.forward(x).cwiseAbs().maxCoeff() < 10.0);
    CHECK(n.forward(Mat::Zero(9, 1)).cwiseAbs().maxCoeff() < 10.0);
  }
}

TEST_CASE("degenerate networks") {
  const FlowNetwork zero = FlowNetwork::zeros({5, 16, 16, 3});
  Rng rng(2);
  CHECK(zero.forward(random_mat(rng, 5, 7)).cwiseAbs().maxCoeff() == 0.0);

  // No hidden layer: the output is a linear read-out of the input.
  FlowNetwork linear = FlowNetwork::zeros({4, 2});
  linear.params().weights[0](0, 1) = 1.0;
  linear.params().weights[0](1, 3) = 1.0;
  const Mat x = random_mat(rng, 4, 6);
  const Mat y = linear.forward(x);
  CHECK(y.row(0) == x.row(1));
  CHECK(y.row(1) == x.row(3));
}

TEST_CASE("forward is permutation equivariant over particles") {
  const FlowNetwork net = FlowNetwork::init({6, 32, 32, 2}, 3);
  Rng rng(3);
  const Mat x = random_mat(rng, 6, 20);
  Mat xr = x.rowwise().reverse();
  const Mat y = net.forward(x);
  const Mat yr = net.forward(xr);
  for (int i = 0; i < 20; ++i) CHECK((y.col(i) - yr.col(19 - i)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("jvp_input: linearity and finite differences") {
  Rng rng(4);
  const FlowNetwork net = FlowNetwork::init({7, 64, 64, 64, 64, 64, 64, 2}, 5);
  const Mat c = random_mat(rng, 7, 16);
  CHECK(net.jvp_input(c, Mat::Zero(7, 16)).cwiseAbs().maxCoeff() == 0.0);
  const Mat v1 = random_mat(rng, 7, 16), v2 = random_mat(rng, 7, 16);
  const Mat sum = net.jvp_input(c, v1 + v2);
  const Mat parts = net.jvp_input(c, v1) + net.jvp_input(c, v2);
  CHECK((sum - parts).cwiseAbs().maxCoeff() < 1e-12);

  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const FlowNetwork n = FlowNetwork::init({5, 64, 64, 64, 64, 64, 64, 2}, 1000 + rep);
    const Mat x = random_mat(rng, 5, 1);
    const Mat v = random_mat(rng, 5, 1);
    const double eps = 1e-5;
    const Mat fd = (n.forward(x + eps * v) - n.forward(x - eps * v)) / (2.0 * eps);
    const Mat jv = n.jvp_input(x, v);
    worst = std::max(worst, rel_err(Vec(jv.col(0)), Vec(fd.col(0)), 1e-3));
  }
  CHECK(worst < 1e-6);

  // Taylor check on a single coordinate.
  const Mat x = random_mat(rng, 7, 1);
  Mat e = Mat::Zero(7, 1);
  e(2, 0) = 1.0;
  const double eps = 1e-5;
  const Mat step = net.forward(x + eps * e) - net.forward(x);
  CHECK((step - eps * net.jvp_input(x, e)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("backward matches finite differences on a 6x64 net with tangents") {
  Rng rng(6);
  const int k = 2;
  const FlowNetwork base = FlowNetwork::init({8, 64, 64, 64, 64, 64, 64, 2}, 7);
  double worst = 0.0;
  for (int batch = 0; batch < 10; ++batch) {
    const Mat stacked = random_mat(rng, 8, 32 * (1 + k));
    const DualTrace trace = base.forward_dual(stacked, k);
    const Mat g = random_mat(rng, trace.output.rows(), trace.output.cols());
    const Parameters grads = base.backward(trace, g);
    const std::size_t total = grads.size();
    for (int p = 0; p < 20; ++p) {
      const std::size_t idx = rng.below(total);
      FlowNetwork plus = base, minus = base;
      const double h = 1e-5;
      plus.params().at(idx) += h;
      minus.params().at(idx) -= h;
      const double fd = (contract(plus, stacked, k, g) - contract(minus, stacked, k, g)) / (2.0 * h);
      worst = std::max(worst, rel_err(grads.at(idx), fd, 1e-4));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backward on degenerate cases") {
  FlowNetwork net = FlowNetwork::zeros({3, 8, 8, 2});
  net.params().biases.back() << 0.5, -1.5;
  Rng rng(8);
  const Mat x = random_mat(rng, 3, 4);
  const DualTrace trace = net.forward_dual(x, 0);
  // loss = |out|^2 summed over the batch
  const Parameters g = net.backward(trace, 2.0 * trace.output);
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    CHECK(g.weights[l].cwiseAbs().maxCoeff() == 0.0);
    if (l + 1 < net.n_layers()) CHECK(g.biases[l].cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(g.biases.back()[0] == doctest::Approx(4.0));
  CHECK(g.biases.back()[1] == doctest::Approx(-12.0));

  // An output row that does not enter the loss leaves its parameters alone.
  FlowNetwork r = FlowNetwork::init({3, 8, 2}, 9);
  const DualTrace t2 = r.forward_dual(x, 0);
  Mat mask = Mat::Zero(2, 4);
  mask.row(0).setOnes();
  const Parameters g2 = r.backward(t2, mask);
  CHECK(g2.weights.back().row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g2.biases.back()[1] == 0.0);
}

TEST_CASE("adam: schedule, clipping and zero gradients") {
  AdamConfig c;
  CHECK(learning_rate_at(c, 0) == 0.004);
  CHECK(learning_rate_at(c, 299) == 0.004);
  CHECK(learning_rate_at(c, 600) == doctest::Approx(0.00256).epsilon(1e-14));

  FlowNetwork net = FlowNetwork::init({2, 4, 1}, 1);
  const FlowNetwork before = net;
  OptimizerState s = OptimizerState::for_network(net, c);
  adam_step(net, Parameters::zeros_like(net.params()), s, 0);
  CHECK(s.step == 1);
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    CHECK(net.params().weights[l] == before.params().weights[l]);
    CHECK(s.first_moment.weights[l].cwiseAbs().maxCoeff() == 0.0);
  }

  // Global norm 10 is scaled to 1 before the moments see it.
  Parameters g = Parameters::zeros_like(net.params());
  g.weights[0](0, 0) = 6.0;
  g.biases[1][0] = 8.0;
  OptimizerState s2 = OptimizerState::for_network(net, c);
  const double norm = adam_step(net, g, s2, 0);
  CHECK(norm == doctest::Approx(10.0));
  CHECK(s2.first_moment.weights[0](0, 0) == doctest::Approx(0.1 * 0.6));
  CHECK(s2.first_moment.biases[1][0] == doctest::Approx(0.1 * 0.8));

  g.biases[0][0] = std::nan("");
  CHECK_THROWS_AS(adam_step(net, g, s2, 0), std::domain_error);
}

TEST_CASE("checkpoint round trip is bitwise") {
  const FlowNetwork net = FlowNetwork::init({9, 64, 64, 2}, 11);
  const auto path = temp_path("ckpt.bin");
  save_checkpoint(path, net, CheckpointInfo{1, 1});
  CheckpointInfo info;
  const FlowNetwork back = load_checkpoint(path, &info);
  CHECK(info.measurement_dim == 1);
  CHECK(info.feature_flags == 1);
  CHECK(back.widths() == net.widths());
  Rng rng(12);
  const Mat x = random_mat(rng, 9, 10);
  CHECK(back.forward(x) == net.forward(x));

  // Flip one byte in the payload.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    char c = 0;
    f.read(&c, 1);
    c ^= 0x10;
    f.seekp(64);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::filesystem::resize_file(path, 10);
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}

TEST_CASE("trainer state round trip") {
  FlowNetwork net = FlowNetwork::init({3, 8, 1}, 2);
  OptimizerState s = OptimizerState::for_network(net);
  Parameters g = Parameters::zeros_like(net.params());
  g.weights[0].setConstant(0.3);
  adam_step(net, g, s, 0);
  adam_step(net, g, s, 0);
  const auto path = temp_path("state.bin");
  save_trainer_state(path, s, 17);
  int next = 0;
  const OptimizerState back = load_trainer_state(path, net, &next);
  CHECK(next == 17);
  CHECK(back.step == 2);
  CHECK(back.first_moment.weights[0] == s.first_moment.weights[0]);
  CHECK(back.second_moment.biases[1] == s.second_moment.biases[1]);
  CHECK_THROWS(load_trainer_state(path, FlowNetwork::init({3, 9, 1}, 2), &next));
  std::filesystem::remove(path);
}
