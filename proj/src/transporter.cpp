#include "pinflow/transporter.hpp"

#include "pinflow/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace pinflow {

TransportConfig inference_preset(Family family) {
  TransportConfig c;
  switch (family) {
    case Family::gauss1d:
      c.delta_L = 0.1;
      c.n_particles = 1500;
      break;
    case Family::gmm4d:
      c.delta_L = 0.5;
      c.n_particles = 1500;
      break;
    case Family::gmm4d_ood:
      c.delta_L = 0.1;
      c.n_particles = 3000;
      break;
    case Family::tdoa:
      c.delta_L = 1.0;
      c.n_particles = 1000;
      break;
  }
  return c;
}

VelocityField network_field(const Task& task, const FlowNetwork& net, const FeatureLayout& layout) {
  layout.check_compatible(net);
  return [&task, &net, layout](const Mat& particles, double lambda) -> Mat {
    const FeatureBatch batch = build_features(task, particles, lambda, layout, false);
    return net.forward(batch.features());
  };
}

namespace {

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

// Largest per-particle Euclidean speed; throws on the first non-finite column.
double max_speed(const Mat& velocity) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < velocity.cols(); ++i) {
    const double s = velocity.col(i).norm();
    if (!std::isfinite(s)) throw ParticleError("non-finite velocity", i);
    best = std::max(best, s);
  }
  return best;
}

// Moves particles that landed on a TDOA sensor just outside the singular disc.
void clear_sensors(const Task* task, Mat& particles) {
  if (task == nullptr) return;
  const auto* lik = std::get_if<TdoaLikelihood>(&task->likelihood);
  if (lik == nullptr) return;
  const double floor = 2.0 * TdoaLikelihood::kSingularRadius;
  for (Eigen::Index i = 0; i < particles.cols(); ++i) {
    for (const Eigen::Vector2d& s : {lik->sensor_a(), lik->sensor_b()}) {
      Eigen::Vector2d off = particles.col(i) - s;
      const double r = off.norm();
      if (r >= floor) continue;
      off = r > 0.0 ? Eigen::Vector2d(off / r) : Eigen::Vector2d::UnitX();
      particles.col(i) = s + floor * off;
    }
  }
}

void check_initial(const Ensemble& e) {
  if (e.size() < 1) throw std::invalid_argument("transport needs at least one particle");
  if (e.lambda != 0.0) throw std::invalid_argument("transport starts at lambda = 0");
}

}  // namespace

TransportResult transport_adaptive(const VelocityField& field, Ensemble initial, const TransportConfig& config,
                                   const Task* task) {
  if (!(config.delta_L > 0.0)) throw std::invalid_argument("delta_L must be positive");
  if (config.max_nfe < 1) throw std::invalid_argument("max_nfe must be >= 1");
  check_initial(initial);
  const double t0 = now_ms();

  TransportResult out;
  Mat x = std::move(initial.particles);
  out.lambdas.push_back(0.0);
  if (config.record_trajectory) out.trajectory.push_back(x);

  // Kahan-compensated running sum of the step sizes.
  double lambda = 0.0;
  double carry = 0.0;
  while (lambda < 1.0) {
    if (out.nfe >= config.max_nfe)
      throw std::runtime_error("transport exceeded max_nfe = " + std::to_string(config.max_nfe) + " at lambda = " +
                               std::to_string(lambda));
    const Mat f = field(x, lambda);
    ++out.nfe;
    const double speed = max_speed(f);
    const double remaining = 1.0 - lambda;
    double step = speed < 1e-12 ? remaining : std::min(config.delta_L / speed, remaining);
    const bool terminal = step >= remaining;
    if (terminal) step = remaining;
    x += f * step;
    clear_sensors(task, x);
    if (terminal) {
      lambda = 1.0;
    } else {
      const double y = step - carry;
      const double t = lambda + y;
      carry = (t - lambda) - y;
      lambda = t;
      if (lambda >= 1.0) lambda = 1.0;
    }
    out.lambdas.push_back(lambda);
    if (config.record_trajectory) out.trajectory.push_back(x);
  }
  out.ensemble = Ensemble{std::move(x), 1.0};
  out.wall_ms = now_ms() - t0;
  return out;
}

TransportResult transport(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                          const TransportConfig& config, std::uint64_t seed) {
  if (config.n_particles < 2) throw std::invalid_argument("n_particles must be >= 2");
  const double t0 = now_ms();
  Ensemble initial = sample(task.prior, config.n_particles, seed);
  TransportResult out = transport_adaptive(network_field(task, net, layout), std::move(initial), config, &task);
  out.wall_ms = now_ms() - t0;
  return out;
}

TransportResult transport_fixed(const VelocityField& field, Ensemble initial, double delta_lambda, const Task* task,
                                bool record_trajectory) {
  check_initial(initial);
  if (!(delta_lambda > 0.0) || delta_lambda > 1.0) throw std::invalid_argument("delta_lambda must lie in (0, 1]");
  const double inv = 1.0 / delta_lambda;
  const int steps = static_cast<int>(std::round(inv));
  if (std::abs(inv - steps) > 1e-9 * steps) throw std::invalid_argument("1/delta_lambda must be an integer");
  const double t0 = now_ms();

  TransportResult out;
  Mat x = std::move(initial.particles);
  out.lambdas.push_back(0.0);
  if (record_trajectory) out.trajectory.push_back(x);
  for (int k = 0; k < steps; ++k) {
    const double lambda = k * delta_lambda;
    const Mat f = field(x, lambda);
    ++out.nfe;
    max_speed(f);
    x += f * delta_lambda;
    clear_sensors(task, x);
    out.lambdas.push_back(k + 1 == steps ? 1.0 : (k + 1) * delta_lambda);
    if (record_trajectory) out.trajectory.push_back(x);
  }
  out.ensemble = Ensemble{std::move(x), 1.0};
  out.wall_ms = now_ms() - t0;
  return out;
}

TransportResult transport_fixed(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                                Ensemble initial, double delta_lambda) {
  return transport_fixed(network_field(task, net, layout), std::move(initial), delta_lambda, &task);
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  return out;
}

void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void write_ensemble_csv(const std::filesystem::path& path, const MatRef& particles) {
  std::ofstream out = open_out(path);
  for (Eigen::Index j = 0; j < particles.rows(); ++j) out << (j ? ",x" : "x") << j;
  out << '\n';
  for (Eigen::Index i = 0; i < particles.cols(); ++i) {
    for (Eigen::Index j = 0; j < particles.rows(); ++j) out << (j ? "," : "") << particles(j, i);
    out << '\n';
  }
  close_out(out, path);
}

void write_trajectory_csv(const std::filesystem::path& path, const TransportResult& result) {
  if (result.trajectory.size() != result.lambdas.size())
    throw std::invalid_argument("trajectory was not recorded for every lambda");
  std::ofstream out = open_out(path);
  const Eigen::Index d = result.trajectory.empty() ? 0 : result.trajectory.front().rows();
  out << "particle,lambda";
  for (Eigen::Index j = 0; j < d; ++j) out << ",x" << j;
  out << '\n';
  for (std::size_t s = 0; s < result.trajectory.size(); ++s) {
    const Mat& x = result.trajectory[s];
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      out << i << ',' << result.lambdas[s];
      for (Eigen::Index j = 0; j < d; ++j) out << ',' << x(j, i);
      out << '\n';
    }
  }
  close_out(out, path);
}

void write_scatter_svg(const std::filesystem::path& path, const std::vector<std::pair<std::string, Mat>>& sets) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  constexpr double kSize = 480.0;
  constexpr double kPad = 20.0;

  double lo[2] = {1e300, 1e300};
  double hi[2] = {-1e300, -1e300};
  for (const auto& [name, x] : sets) {
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      for (int a = 0; a < 2; ++a) {
        const double v = a < x.rows() ? x(a, i) : 0.0;
        lo[a] = std::min(lo[a], v);
        hi[a] = std::max(hi[a], v);
      }
    }
  }
  for (int a = 0; a < 2; ++a)
    if (!(hi[a] > lo[a])) {
      lo[a] -= 1.0;
      hi[a] += 1.0;
    }

  std::ofstream out = open_out(path);
  out.precision(5);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kPad << "\" height=\""
      << kSize + 2 * kPad << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t s = 0; s < sets.size(); ++s) {
    const auto& [name, x] = sets[s];
    const char* color = kColors[s % std::size(kColors)];
    out << "<g fill=\"" << color << "\" fill-opacity=\"0.4\"><title>" << name << "</title>\n";
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      const double u = x(0, i);
      const double v = x.rows() > 1 ? x(1, i) : 0.0;
      const double px = kPad + (u - lo[0]) / (hi[0] - lo[0]) * kSize;
      const double py = kPad + (1.0 - (v - lo[1]) / (hi[1] - lo[1])) * kSize;
      out << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"1.5\"/>\n";
    }
    out << "</g>\n<text x=\"" << kPad << "\" y=\"" << 14 + 14 * s << "\" fill=\"" << color
        << "\" font-size=\"12\">" << name << "</text>\n";
  }
  out << "</svg>\n";
  close_out(out, path);
}

}  // namespace pinflow
