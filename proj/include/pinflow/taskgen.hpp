#pragma once

#include "pinflow/task.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pinflow {

inline constexpr int kGeneratorVersion = 1;

/// Sensor layout shared by every TDOA task.
inline const Eigen::Vector2d kSensorA{-3.0, 0.0};
inline const Eigen::Vector2d kSensorB{3.0, 0.0};

/// 1D Gaussian prior and Gaussian likelihood; reference family with a
/// closed-form flow and Kalman posterior.
std::vector<Task> gen_gauss1d(int n_tasks, std::uint64_t seed, const std::string& id_prefix = "gauss1d");
/// 4D diagonal Gaussian prior, 3-component Gaussian-mixture likelihood.
std::vector<Task> gen_gmm4d(int n_tasks, std::uint64_t seed, const std::string& id_prefix = "gmm4d");
/// As gen_gmm4d with a 3-component mixture prior (zero-shot evaluation only).
std::vector<Task> gen_gmm4d_ood(int n_tasks, std::uint64_t seed, const std::string& id_prefix = "gmm4d_ood");
/// Single range-difference measurement between two fixed sensors.
std::vector<Task> gen_tdoa(int n_tasks, std::uint64_t seed, const std::string& id_prefix = "tdoa");

std::vector<Task> generate(Family family, int n_tasks, std::uint64_t seed, const std::string& id_prefix);

/// Draws from the task's reference posterior.
Ensemble ground_truth_sample(const Task& task, Eigen::Index n, std::uint64_t seed, Warnings* warnings = nullptr);

/// Seed derived from a task id, so reference draws are tied to the task.
std::uint64_t task_seed(const std::string& task_id, std::uint64_t base_seed);

std::string serialize_task(const Task& task);
Task parse_task(const std::string& line);

void write_ndjson(const std::filesystem::path& path, const std::vector<Task>& tasks);
std::vector<Task> read_ndjson(const std::filesystem::path& path);

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

/// n/12 each for validation and test, the rest for training. Zero-shot
/// families put everything in test.
SplitCounts split_counts(Family family, int n_tasks);

/// Per-split seeds are fixed offsets of the master seed.
std::uint64_t split_seed(std::uint64_t seed, const std::string& split);

/// Writes train/val/test NDJSON files and manifest.json into `dir`.
void write_dataset(const std::filesystem::path& dir, Family family, int n_tasks, std::uint64_t seed);

}  // namespace pinflow
