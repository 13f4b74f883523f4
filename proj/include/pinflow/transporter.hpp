#pragma once

#include "pinflow/homotopy.hpp"
#include "pinflow/neuralflow.hpp"
#include "pinflow/task.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace pinflow {

struct TransportConfig {
  double delta_L = 0.5;  // displacement bound per step, state units
  int n_particles = 1500;
  int max_nfe = 10000;
  bool record_trajectory = false;
};

/// Inference settings used for each task family.
TransportConfig inference_preset(Family family);

struct TransportResult {
  Ensemble ensemble;
  int nfe = 0;
  std::vector<double> lambdas;     // 0, ..., 1
  std::vector<Mat> trajectory;     // states at each lambda when recorded
  double wall_ms = 0.0;
};

/// Velocity of every particle (d x N) at pseudo-time lambda.
using VelocityField = std::function<Mat(const Mat& particles, double lambda)>;

VelocityField network_field(const Task& task, const FlowNetwork& net, const FeatureLayout& layout);

/// Euler integration with dlambda = min(delta_L / max_i |f_i|, 1 - lambda).
/// When max_i |f_i| < 1e-12 the remaining interval is taken in one step.
/// `task` (optional) keeps TDOA particles off the sensor singularities.
TransportResult transport_adaptive(const VelocityField& field, Ensemble initial, const TransportConfig& config,
                                   const Task* task = nullptr);

/// Samples config.n_particles from the prior and transports them.
TransportResult transport(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                          const TransportConfig& config, std::uint64_t seed);

/// Fixed-step Euler integration with 1/delta_lambda equal steps.
TransportResult transport_fixed(const VelocityField& field, Ensemble initial, double delta_lambda,
                                const Task* task = nullptr, bool record_trajectory = false);
TransportResult transport_fixed(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                                Ensemble initial, double delta_lambda);

/// One particle per row, header x0..x{d-1}.
void write_ensemble_csv(const std::filesystem::path& path, const MatRef& particles);

/// Columns particle, lambda, x0..x{d-1}; one row per particle per recorded state.
void write_trajectory_csv(const std::filesystem::path& path, const TransportResult& result);

/// Minimal SVG scatter of the first two coordinates, for quick inspection.
void write_scatter_svg(const std::filesystem::path& path, const std::vector<std::pair<std::string, Mat>>& sets);

}  // namespace pinflow
