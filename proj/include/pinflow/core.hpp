#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pinflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;
using MatRef = Eigen::Ref<const Eigen::MatrixXd>;

/// Particle set: one column per particle, plus the pseudo-time it sits at.
struct Ensemble {
  Mat particles;
  double lambda = 0.0;

  Eigen::Index dim() const { return particles.rows(); }
  Eigen::Index size() const { return particles.cols(); }
};

/// Soft diagnostics (coverage, acceptance rate) that do not abort a run.
using Warnings = std::vector<std::string>;

/// A numerical failure tied to one particle of a batch.
class ParticleError : public std::runtime_error {
 public:
  ParticleError(const std::string& what, Eigen::Index particle)
      : std::runtime_error(what + " (particle " + std::to_string(particle) + ")"),
        particle_(particle) {}
  Eigen::Index particle() const { return particle_; }

 private:
  Eigen::Index particle_;
};

}  // namespace pinflow
