#pragma once

#include "pinflow/densities.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <variant>

namespace pinflow {

enum class Family { gauss1d, gmm4d, gmm4d_ood, tdoa };

std::string_view family_name(Family family);
std::optional<Family> parse_family(std::string_view name);

/// Reference posterior: analytic mixture or a grid discretization.
using GroundTruth = std::variant<std::monostate, GaussianMixture, GridSpec>;

/// One inference problem: prior g, likelihood h, the conditioning vector z
/// fed to the network, and a handle to the reference posterior.
struct Task {
  std::string id;
  Family family = Family::gauss1d;
  DensityModel prior;
  DensityModel likelihood;
  Vec z;
  GroundTruth truth;

  Eigen::Index state_dim() const { return dim(prior); }
  Eigen::Index measurement_dim() const { return z.size(); }
};

}  // namespace pinflow
