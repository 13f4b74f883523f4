#include "pinflow/neuralflow.hpp"

#include "pinflow/rng.hpp"

#include <cmath>
#include <sstream>

namespace pinflow {

// ------------------------------------------------------------------ Parameters

Parameters Parameters::zeros_like(const Parameters& other) {
  Parameters p;
  for (const auto& w : other.weights) p.weights.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const auto& b : other.biases) p.biases.push_back(Vec::Zero(b.size()));
  return p;
}

std::size_t Parameters::size() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
  return n;
}

double& Parameters::at(std::size_t flat_index) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto nw = static_cast<std::size_t>(weights[l].size());
    if (flat_index < nw) {
      const auto cols = static_cast<std::size_t>(weights[l].cols());
      return weights[l](static_cast<Eigen::Index>(flat_index / cols), static_cast<Eigen::Index>(flat_index % cols));
    }
    flat_index -= nw;
    const auto nb = static_cast<std::size_t>(biases[l].size());
    if (flat_index < nb) return biases[l][static_cast<Eigen::Index>(flat_index)];
    flat_index -= nb;
  }
  throw std::out_of_range("Parameters::at: index out of range");
}

double Parameters::at(std::size_t flat_index) const { return const_cast<Parameters*>(this)->at(flat_index); }

double Parameters::squared_norm() const {
  double s = 0.0;
  for (const auto& w : weights) s += w.squaredNorm();
  for (const auto& b : biases) s += b.squaredNorm();
  return s;
}

bool Parameters::all_finite() const {
  for (const auto& w : weights)
    if (!w.allFinite()) return false;
  for (const auto& b : biases)
    if (!b.allFinite()) return false;
  return true;
}

void Parameters::scale(double factor) {
  for (auto& w : weights) w *= factor;
  for (auto& b : biases) b *= factor;
}

void Parameters::add_scaled(const Parameters& other, double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += factor * other.weights[l];
    biases[l] += factor * other.biases[l];
  }
}

bool Parameters::same_shape(const Parameters& other) const {
  if (weights.size() != other.weights.size() || biases.size() != other.biases.size()) return false;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != other.weights[l].rows() || weights[l].cols() != other.weights[l].cols()) return false;
    if (biases[l].size() != other.biases[l].size()) return false;
  }
  return true;
}

// ----------------------------------------------------------------- FlowNetwork

namespace {

void check_widths(const std::vector<int>& widths) {
  if (widths.size() < 2) throw std::invalid_argument("FlowNetwork: need at least input and output widths");
  for (int w : widths)
    if (w <= 0) throw std::invalid_argument("FlowNetwork: layer widths must be positive");
}

Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return (1.0 + (-z).exp()).inverse(); }

}  // namespace

FlowNetwork FlowNetwork::zeros(std::vector<int> widths) {
  check_widths(widths);
  FlowNetwork net;
  net.widths_ = std::move(widths);
  for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
    net.params_.weights.push_back(Mat::Zero(net.widths_[l + 1], net.widths_[l]));
    net.params_.biases.push_back(Vec::Zero(net.widths_[l + 1]));
  }
  return net;
}

FlowNetwork FlowNetwork::init(std::vector<int> widths, std::uint64_t seed) {
  FlowNetwork net = zeros(std::move(widths));
  Rng rng(seed);
  for (auto& w : net.params_.weights) {
    const double bound = std::sqrt(3.0 / static_cast<double>(w.cols()));
    // Row-major fill so the draw order matches the checkpoint layout.
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-bound, bound);
  }
  return net;
}

void FlowNetwork::check_input(const MatRef& inputs) const {
  if (widths_.empty()) throw std::logic_error("FlowNetwork: uninitialized network");
  if (inputs.rows() != input_width()) {
    std::ostringstream msg;
    msg << "FlowNetwork: input width " << inputs.rows() << " does not match " << input_width();
    throw std::invalid_argument(msg.str());
  }
}

Mat FlowNetwork::forward(const MatRef& inputs) const {
  check_input(inputs);
  Mat a = inputs;
  const std::size_t last = n_layers() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Eigen::ArrayXXd z = ((params_.weights[l] * a).colwise() + params_.biases[l]).array();
    a = (z * sigmoid(z)).matrix();
  }
  return (params_.weights[last] * a).colwise() + params_.biases[last];
}

Mat FlowNetwork::jvp_input(const MatRef& inputs, const MatRef& tangents) const {
  check_input(inputs);
  if (tangents.rows() != inputs.rows() || tangents.cols() != inputs.cols())
    throw std::invalid_argument("FlowNetwork::jvp_input: tangent shape mismatch");
  Mat stacked(inputs.rows(), 2 * inputs.cols());
  stacked << inputs, tangents;
  DualTrace trace = forward_dual(stacked, 1);
  return trace.tangent(0);
}

DualTrace FlowNetwork::forward_dual(const MatRef& stacked, int n_tangents) const {
  check_input(stacked);
  if (n_tangents < 0 || stacked.cols() % (n_tangents + 1) != 0)
    throw std::invalid_argument("FlowNetwork::forward_dual: column count not divisible by 1+K");
  DualTrace trace;
  trace.batch = stacked.cols() / (n_tangents + 1);
  trace.n_tangents = n_tangents;
  const Eigen::Index b = trace.batch;
  const std::size_t last = n_layers() - 1;

  Mat a = stacked;
  for (std::size_t l = 0; l < last; ++l) {
    Mat z = params_.weights[l] * a;
    z.leftCols(b).colwise() += params_.biases[l];
    const Eigen::ArrayXXd z0 = z.leftCols(b).array();
    const Eigen::ArrayXXd s = sigmoid(z0);
    const Eigen::ArrayXXd slope = s * (1.0 + z0 * (1.0 - s));
    Mat next(z.rows(), z.cols());
    next.leftCols(b) = (z0 * s).matrix();
    for (int k = 1; k <= n_tangents; ++k)
      next.middleCols(b * k, b) = (slope * z.middleCols(b * k, b).array()).matrix();
    trace.layer_inputs.push_back(std::move(a));
    trace.pre_activations.push_back(std::move(z));
    a = std::move(next);
  }
  Mat out = params_.weights[last] * a;
  out.leftCols(b).colwise() += params_.biases[last];
  trace.layer_inputs.push_back(std::move(a));
  trace.output = std::move(out);
  return trace;
}

Parameters FlowNetwork::backward(const DualTrace& trace, const MatRef& output_grad) const {
  if (output_grad.rows() != trace.output.rows() || output_grad.cols() != trace.output.cols())
    throw std::invalid_argument("FlowNetwork::backward: gradient shape mismatch");
  const Eigen::Index b = trace.batch;
  const int k_max = trace.n_tangents;
  const std::size_t last = n_layers() - 1;
  Parameters grads = Parameters::zeros_like(params_);

  Mat g = output_grad;  // gradient w.r.t. the current layer's pre-activation
  for (std::size_t l = last + 1; l-- > 0;) {
    if (l < last) {
      // g holds dL/d(activation); push it through SiLU and its tangent map.
      const Mat& z = trace.pre_activations[l];
      const Eigen::ArrayXXd z0 = z.leftCols(b).array();
      const Eigen::ArrayXXd s = sigmoid(z0);
      const Eigen::ArrayXXd slope = s * (1.0 + z0 * (1.0 - s));
      const Eigen::ArrayXXd curvature = s * (1.0 - s) * (2.0 + z0 * (1.0 - 2.0 * s));
      Mat gz(g.rows(), g.cols());
      Eigen::ArrayXXd g0 = g.leftCols(b).array() * slope;
      for (int k = 1; k <= k_max; ++k) {
        const auto gk = g.middleCols(b * k, b).array();
        g0 += gk * curvature * z.middleCols(b * k, b).array();
        gz.middleCols(b * k, b) = (gk * slope).matrix();
      }
      gz.leftCols(b) = g0.matrix();
      g = std::move(gz);
    }
    grads.weights[l].noalias() = g * trace.layer_inputs[l].transpose();
    grads.biases[l] = g.leftCols(b).rowwise().sum();
    if (l > 0) g = params_.weights[l].transpose() * g;
  }
  return grads;
}

// ------------------------------------------------------------------------ Adam

double learning_rate_at(const AdamConfig& config, int epoch) {
  if (config.decay_period <= 0) return config.learning_rate;
  return config.learning_rate * std::pow(config.decay, epoch / config.decay_period);
}

OptimizerState OptimizerState::for_network(const FlowNetwork& net, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = Parameters::zeros_like(net.params());
  s.second_moment = Parameters::zeros_like(net.params());
  return s;
}

double adam_step(FlowNetwork& net, Parameters grads, OptimizerState& state, int epoch) {
  if (!grads.same_shape(net.params())) throw std::invalid_argument("adam_step: gradient shape mismatch");
  if (!grads.all_finite()) throw std::domain_error("adam_step: non-finite gradient");
  const AdamConfig& c = state.config;
  const double norm = std::sqrt(grads.squared_norm());
  if (c.clip_norm > 0.0 && norm > c.clip_norm) grads.scale(c.clip_norm / norm);

  ++state.step;
  const double lr = learning_rate_at(c, epoch);
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.epsilon);
  };
  Parameters& p = net.params();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    update(p.weights[l], state.first_moment.weights[l], state.second_moment.weights[l], grads.weights[l]);
    update(p.biases[l], state.first_moment.biases[l], state.second_moment.biases[l], grads.biases[l]);
  }
  return norm;
}

}  // namespace pinflow
