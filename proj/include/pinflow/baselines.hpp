#pragma once

#include "pinflow/core.hpp"
#include "pinflow/task.hpp"

#include <cstdint>
#include <functional>

namespace pinflow {

struct SvgdConfig {
  int n_particles = 1500;
  int iterations = 500;
  double learning_rate = 0.2;
  double adagrad_epsilon = 1e-8;
  double bandwidth_floor = 1e-8;

  void validate() const;
};

struct AnnealConfig {
  int n_particles = 1500;
  int beta_steps = 10;  // beta = 1/beta_steps, 2/beta_steps, ..., 1
  int inner_iterations = 5;
  double step_size = 0.1;

  void validate() const;
};

/// Target score at every column of a d x N particle matrix.
using ScoreFunction = std::function<Mat(const Mat& particles)>;

/// Median of the pairwise Euclidean distances between columns.
double median_pairwise_distance(const MatRef& particles);
/// h = m^2 / ln N, floored; 1 when N = 1 (no repulsion is possible).
double median_bandwidth(const MatRef& particles, double floor = 1e-8);

/// Stein direction for an RBF kernel exp(-|x - y|^2 / h):
/// phi(x_i) = mean_j [k(x_j, x_i) s_j + grad_{x_j} k(x_j, x_i)].
Mat stein_direction(const MatRef& particles, const MatRef& scores, double bandwidth);
/// The repulsive (kernel-gradient) part of stein_direction alone.
Mat stein_repulsion(const MatRef& particles, double bandwidth);

Ensemble svgd(const ScoreFunction& score, Ensemble initial, const SvgdConfig& config);
/// Starts from prior draws and targets grad log g + grad log h.
Ensemble svgd(const Task& task, const SvgdConfig& config, std::uint64_t seed);

/// Log density with optional gradient output.
using LogTarget = std::function<double(const Vec& x, Vec* grad)>;

/// Runs `steps` MALA transitions per column. Returns the final states; the
/// acceptance fraction over all proposals is written to `acceptance`.
Mat mala_run(const LogTarget& target, Mat particles, int steps, double step_size, std::uint64_t seed,
             double* acceptance = nullptr);

/// Tempered MALA through log g + beta log h. Stages with acceptance below 1%
/// add a message to `warnings`.
Ensemble annealed_mcmc(const Task& task, const AnnealConfig& config, std::uint64_t seed,
                       Warnings* warnings = nullptr);

}  // namespace pinflow
