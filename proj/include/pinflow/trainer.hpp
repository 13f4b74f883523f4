#pragma once

#include "pinflow/homotopy.hpp"
#include "pinflow/neuralflow.hpp"
#include "pinflow/task.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pinflow {

struct TrainConfig {
  std::string preset = "paper";
  int n_tasks = 0;  // leading tasks of the dataset to use; 0 = all
  int n_particles = 500;
  double delta_lambda = 0.01;
  int epochs = 6000;
  int batch_tasks = 64;
  AdamConfig adam;
  std::uint64_t seed = 0;
  int hidden_layers = 6;
  int hidden_width = 64;
  bool drop_gradients = false;
  bool update_per_step = false;
  int checkpoint_every = 100;

  /// Number of Euler steps, 1/delta_lambda. Throws unless it is an integer.
  int steps() const;
  void validate() const;
};

/// "paper" (full hyperparameters), "desk" (fewer tasks/epochs/particles) or
/// "smoke" (single-core budget used by the test suites).
TrainConfig preset_config(std::string_view name);

/// Applies `key = value` lines (TOML-style; '#' comments) on top of `base`.
TrainConfig parse_train_config(std::string_view text, TrainConfig base);
TrainConfig load_train_config(const std::string& path, TrainConfig base);
/// Canonical key = value rendering; also the input of the config hash.
std::string format_train_config(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
  std::string checkpoint;
  int truncated = 0;  // trajectories cut short by a non-finite step
};

struct TrainLog {
  std::vector<EpochRecord> records;
};

struct TrajectoryGradient {
  double total_loss = 0.0;
  std::vector<double> step_losses;
  Parameters grads;  // of sum_k weight_k * step_loss_k
  Mat final_particles;
  /// First step whose loss or gradient was non-finite; -1 if none.
  int truncated_at = -1;
};

/// Integrates one task from lambda = 0 to 1 with fixed Euler steps,
/// accumulating per-step losses and gradients. States are detached between
/// steps. `step_weights` (default all ones) scales each step's gradient.
/// A trajectory that diverges after step 0 stops at the last finite step and
/// keeps the gradients collected so far; a non-finite step 0 throws.
TrajectoryGradient trajectory_gradient(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                                       Mat particles, double delta_lambda,
                                       std::span<const double> step_weights = {});

/// Initial particles for a (task, epoch) pair; training and loss evaluation
/// draw the same states.
Mat training_particles(const Task& task, const TrainConfig& config, int epoch, std::size_t task_index);

struct TrainState {
  FlowNetwork net;
  OptimizerState optimizer;
  int next_epoch = 0;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called every `checkpoint_every` epochs and after the last one; returns
  /// the checkpoint path to record in the log (may be empty).
  std::function<std::string(int epoch, const TrainState&)> on_checkpoint;
  /// Called after each checkpoint's validation pass when validation tasks
  /// were given; `improved` is true when this is the new best network.
  std::function<void(int epoch, double validation_ed, bool improved, const TrainState&)> on_validation;
};

struct TrainResult {
  TrainState state;
  FeatureLayout layout;
  TrainLog log;
  /// Checkpoint with the lowest validation ED, when validation tasks were given.
  std::optional<FlowNetwork> best_net;
  int best_epoch = -1;
  double best_validation_ed = 0.0;

  /// best_net if present, otherwise the final network.
  const FlowNetwork& selected_net() const { return best_net ? *best_net : state.net; }
};

TrainState initial_state(const FeatureLayout& layout, const TrainConfig& config);

/// Mean energy distance to reference posterior draws over the first (at
/// most) 10 tasks, transported with each family's inference preset; infinity
/// if any transport fails.
double validation_energy_distance(const std::vector<Task>& tasks, const FlowNetwork& net, const FeatureLayout& layout,
                                  std::uint64_t seed);

/// With non-empty `validation`, every checkpoint is scored by
/// validation_energy_distance and the best network is kept in the result.
TrainResult train(const std::vector<Task>& dataset, const TrainConfig& config, const TrainHooks& hooks = {},
                  std::optional<TrainState> resume_from = std::nullopt, const std::vector<Task>& validation = {});

/// Mean per-task total loss over the dataset at `epoch`'s particle draws,
/// without touching any optimizer state.
double evaluate_loss(const std::vector<Task>& dataset, const FlowNetwork& net, const FeatureLayout& layout,
                     const TrainConfig& config, int epoch);

struct TransportConfig;

struct AblationResult {
  TrainResult full;
  TrainResult gradient_free;
  std::vector<double> ed_full;
  std::vector<double> ed_gradient_free;
};

/// Trains with and without the score features on identical seeds and
/// reports held-out energy distances against reference posterior draws.
/// Each side uses its best-by-validation network when `validation` is given.
AblationResult ablate_features(const std::vector<Task>& dataset, const std::vector<Task>& heldout,
                               const TrainConfig& config, const TransportConfig& transport, int reference_samples,
                               std::uint64_t seed, const std::vector<Task>& validation = {});

}  // namespace pinflow
