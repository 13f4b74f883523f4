#include "pinflow/metrics.hpp"

#include "pinflow/parallel.hpp"
#include "pinflow/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace pinflow {

void MetricConfig::validate() const {
  if (swd_projections < 1) throw std::invalid_argument("swd_projections must be >= 1");
  if (swd_order != 1 && swd_order != 2) throw std::invalid_argument("swd_order must be 1 or 2");
  if (gt_samples < 2) throw std::invalid_argument("gt_samples must be >= 2");
}

namespace {

void check_pair(const MatRef& a, const MatRef& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("sample dimensions differ: " + std::to_string(a.rows()) + " vs " +
                                std::to_string(b.rows()));
  if (a.cols() == 0 || b.cols() == 0) throw std::invalid_argument("empty sample");
}

// Sum over columns j in [begin, end) of sum_i |a_i - b_j|, with i restricted
// to i > j when `upper` is set (within-set sums).
double distance_sum(const MatRef& a, const MatRef& b, Eigen::Index begin, Eigen::Index end, bool upper) {
  double total = 0.0;
  for (Eigen::Index j = begin; j < end; ++j) {
    const Eigen::Index first = upper ? j + 1 : 0;
    if (first >= a.cols()) continue;
    total += (a.rightCols(a.cols() - first).colwise() - b.col(j)).colwise().norm().sum();
  }
  return total;
}

// Chunked so the reduction order is fixed regardless of worker count.
double chunked_sum(const MatRef& a, const MatRef& b, bool upper) {
  constexpr Eigen::Index kChunk = 64;
  const Eigen::Index n = b.cols();
  const std::size_t chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  std::vector<double> partial(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    partial[c] = distance_sum(a, b, begin, std::min(n, begin + kChunk), upper);
  });
  return std::accumulate(partial.begin(), partial.end(), 0.0);
}

}  // namespace

double mean_cross_distance(const MatRef& a, const MatRef& b) {
  check_pair(a, b);
  return chunked_sum(a, b, false) / (static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

double mean_within_distance(const MatRef& a) {
  if (a.cols() < 2) return 0.0;
  const double n = static_cast<double>(a.cols());
  return chunked_sum(a, a, true) / (0.5 * n * (n - 1.0));
}

namespace {

// Fixed operand order so the result is bitwise symmetric in its arguments.
bool second_goes_first(const MatRef& a, const MatRef& b) {
  if (a.cols() != b.cols()) return b.cols() < a.cols();
  for (Eigen::Index i = 0; i < a.cols(); ++i)
    for (Eigen::Index j = 0; j < a.rows(); ++j)
      if (a(j, i) != b(j, i)) return b(j, i) < a(j, i);
  return false;
}

double combine(double cross, double within_first, double within_second) {
  return std::sqrt(std::max(0.0, 2.0 * cross - (within_first + within_second)));
}

}  // namespace

double energy_distance(const MatRef& a, const MatRef& b) {
  check_pair(a, b);
  if (second_goes_first(a, b)) return energy_distance(b, a);
  return combine(mean_cross_distance(a, b), mean_within_distance(a), mean_within_distance(b));
}

EnergyReference::EnergyReference(Mat reference) : reference_(std::move(reference)) {
  if (reference_.cols() == 0) throw std::invalid_argument("empty reference sample");
  within_ = mean_within_distance(reference_);
}

double EnergyReference::distance(const MatRef& sample) const {
  check_pair(sample, reference_);
  if (second_goes_first(sample, reference_))
    return combine(mean_cross_distance(reference_, sample), within_, mean_within_distance(sample));
  return combine(mean_cross_distance(sample, reference_), mean_within_distance(sample), within_);
}

double sliced_wasserstein(const MatRef& a, const MatRef& b, const MetricConfig& config, std::uint64_t seed) {
  config.validate();
  check_pair(a, b);
  if (a.cols() != b.cols())
    throw std::invalid_argument("sliced Wasserstein needs equal sample counts; downsample first");
  const Eigen::Index d = a.rows();
  const Eigen::Index n = a.cols();

  Rng rng(seed);
  Mat dirs(d, config.swd_projections);
  for (int k = 0; k < config.swd_projections; ++k) {
    Vec u(d);
    double norm = 0.0;
    do {
      for (Eigen::Index j = 0; j < d; ++j) u[j] = rng.normal();
      norm = u.norm();
    } while (norm < 1e-12);
    dirs.col(k) = u / norm;
  }

  const Mat pa = dirs.transpose() * a;  // projections x n
  const Mat pb = dirs.transpose() * b;
  std::vector<double> per_dir(static_cast<std::size_t>(config.swd_projections));
  parallel_for(per_dir.size(), [&](std::size_t k) {
    std::vector<double> u(pa.row(k).begin(), pa.row(k).end());
    std::vector<double> v(pb.row(k).begin(), pb.row(k).end());
    std::sort(u.begin(), u.end());
    std::sort(v.begin(), v.end());
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double gap = std::abs(u[i] - v[i]);
      acc += config.swd_order == 1 ? gap : gap * gap;
    }
    per_dir[k] = acc / static_cast<double>(n);
  });
  const double mean = std::accumulate(per_dir.begin(), per_dir.end(), 0.0) / static_cast<double>(per_dir.size());
  return config.swd_order == 1 ? mean : std::sqrt(mean);
}

Mat downsample(const MatRef& samples, Eigen::Index n, std::uint64_t seed) {
  if (n < 0 || n > samples.cols()) throw std::invalid_argument("downsample size out of range");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(samples.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(samples.cols() - i)));
    std::swap(idx[i], idx[j]);
  }
  std::sort(idx.begin(), idx.begin() + n);
  Mat out(samples.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) out.col(i) = samples.col(idx[i]);
  return out;
}

}  // namespace pinflow
