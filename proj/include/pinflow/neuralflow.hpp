#pragma once

#include "pinflow/core.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace pinflow {

/// Weights and biases of every layer. Also used for gradients and optimizer
/// moments, which share the network's shapes.
struct Parameters {
  std::vector<Mat> weights;  // layer l: widths[l+1] x widths[l]
  std::vector<Vec> biases;

  static Parameters zeros_like(const Parameters& other);

  std::size_t size() const;
  /// Flat view: layer by layer, row-major weights then bias.
  double& at(std::size_t flat_index);
  double at(std::size_t flat_index) const;

  double squared_norm() const;
  bool all_finite() const;
  void scale(double factor);
  void add_scaled(const Parameters& other, double factor);
  bool same_shape(const Parameters& other) const;
};

enum class Activation : std::uint32_t { silu = 1 };

/// Intermediate values of a batched primal+tangent forward pass. Columns are
/// stacked as [primal | tangent 1 | ... | tangent K], each block `batch` wide.
struct DualTrace {
  Eigen::Index batch = 0;
  int n_tangents = 0;
  std::vector<Mat> layer_inputs;
  std::vector<Mat> pre_activations;  // hidden layers only
  Mat output;                        // out x batch*(1+K)

  auto primal() const { return output.leftCols(batch); }
  auto tangent(int k) const { return output.middleCols(batch * (1 + k), batch); }
};

/// Multilayer perceptron with SiLU hidden activations and a linear output.
class FlowNetwork {
 public:
  FlowNetwork() = default;

  /// Fan-in scaled uniform weights (variance 1/fan_in), zero biases.
  static FlowNetwork init(std::vector<int> widths, std::uint64_t seed);
  static FlowNetwork zeros(std::vector<int> widths);

  const std::vector<int>& widths() const { return widths_; }
  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  std::size_t n_layers() const { return params_.weights.size(); }
  Activation activation() const { return Activation::silu; }

  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

  /// inputs: input_width x B. Returns output_width x B.
  Mat forward(const MatRef& inputs) const;
  /// Directional derivative of forward at `inputs` along `tangents`.
  Mat jvp_input(const MatRef& inputs, const MatRef& tangents) const;

  DualTrace forward_dual(const MatRef& stacked, int n_tangents) const;
  /// Reverse pass over a dual trace. `output_grad` has the trace's output
  /// shape and holds dLoss/d(primal) and dLoss/d(tangent k) blockwise.
  Parameters backward(const DualTrace& trace, const MatRef& output_grad) const;

 private:
  void check_input(const MatRef& inputs) const;

  std::vector<int> widths_;
  Parameters params_;
};

struct AdamConfig {
  double learning_rate = 0.004;
  double decay = 0.8;
  int decay_period = 300;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Step-decayed learning rate for a given epoch.
double learning_rate_at(const AdamConfig& config, int epoch);

struct OptimizerState {
  AdamConfig config;
  Parameters first_moment;
  Parameters second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_network(const FlowNetwork& net, AdamConfig config = {});
};

/// Global-norm clip then one Adam update. Returns the pre-clip gradient norm.
double adam_step(FlowNetwork& net, Parameters grads, OptimizerState& state, int epoch);

/// Extra fields stored in the checkpoint architecture header.
struct CheckpointInfo {
  std::uint32_t measurement_dim = 0;
  std::uint32_t feature_flags = 0;
};

void save_checkpoint(const std::filesystem::path& path, const FlowNetwork& net,
                     const CheckpointInfo& info = {});
FlowNetwork load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

/// Optimizer moments and epoch counter for resuming training.
void save_trainer_state(const std::filesystem::path& path, const OptimizerState& state, int next_epoch);
OptimizerState load_trainer_state(const std::filesystem::path& path, const FlowNetwork& net, int* next_epoch);

}  // namespace pinflow
