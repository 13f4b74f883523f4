#pragma once

#include "pinflow/core.hpp"

#include <cstdint>

namespace pinflow {

struct MetricConfig {
  int swd_projections = 1000;
  int swd_order = 2;
  int gt_samples = 10000;

  void validate() const;
};

/// sqrt of 2E|X-Y| - E|X-X'| - E|Y-Y'| with within-set means over i != j,
/// clamped at zero. Columns are samples.
double energy_distance(const MatRef& a, const MatRef& b);

/// Caches the within-set term of a reference sample.
class EnergyReference {
 public:
  explicit EnergyReference(Mat reference);
  double distance(const MatRef& sample) const;
  const Mat& samples() const { return reference_; }

 private:
  Mat reference_;
  double within_ = 0.0;
};

/// Mean pairwise distance between the columns of a and b.
double mean_cross_distance(const MatRef& a, const MatRef& b);
/// Mean distance over distinct pairs within a (0 for a single sample).
double mean_within_distance(const MatRef& a);

/// (mean over random unit directions of W_p^p)^(1/p) between the projected
/// samples, pairing sorted projections. Requires equal sample counts.
double sliced_wasserstein(const MatRef& a, const MatRef& b, const MetricConfig& config, std::uint64_t seed);

/// n columns chosen uniformly without replacement, kept in original order.
Mat downsample(const MatRef& samples, Eigen::Index n, std::uint64_t seed);

}  // namespace pinflow
