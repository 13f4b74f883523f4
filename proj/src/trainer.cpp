#include "pinflow/trainer.hpp"

#include "pinflow/metrics.hpp"
#include "pinflow/parallel.hpp"
#include "pinflow/rng.hpp"
#include "pinflow/taskgen.hpp"
#include "pinflow/transporter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace pinflow {

int TrainConfig::steps() const {
  if (!(delta_lambda > 0.0) || delta_lambda > 1.0) throw std::invalid_argument("delta_lambda must lie in (0, 1]");
  const double inv = 1.0 / delta_lambda;
  const double rounded = std::round(inv);
  if (std::abs(inv - rounded) > 1e-9 * rounded) throw std::invalid_argument("1/delta_lambda must be an integer");
  return static_cast<int>(rounded);
}

void TrainConfig::validate() const {
  steps();
  if (n_tasks < 0) throw std::invalid_argument("n_tasks must be >= 0");
  if (n_particles < 2) throw std::invalid_argument("n_particles must be >= 2");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_tasks < 1) throw std::invalid_argument("batch_tasks must be >= 1");
  if (hidden_layers < 1 || hidden_width < 1) throw std::invalid_argument("hidden layer sizes must be >= 1");
  if (checkpoint_every < 1) throw std::invalid_argument("checkpoint_every must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam.decay > 0.0) || adam.decay_period < 1) throw std::invalid_argument("invalid learning-rate decay");
  if (!(adam.clip_norm > 0.0)) throw std::invalid_argument("clip must be positive");
}

TrainConfig preset_config(std::string_view name) {
  TrainConfig c;
  if (name == "paper") {
    c.preset = "paper";
  } else if (name == "desk") {
    c.preset = "desk";
    c.n_tasks = 200;
    c.epochs = 1000;
    c.n_particles = 200;
  } else if (name == "smoke") {
    c.preset = "smoke";
    c.n_tasks = 64;
    c.epochs = 200;
    c.n_particles = 32;
    c.batch_tasks = 4;
    c.adam.decay_period = 20;
    c.checkpoint_every = 20;
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "'");
  }
  return c;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return x;
}

int to_int(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x != std::floor(x) || std::abs(x) > 2e9) throw std::invalid_argument("config: '" + key + "' expects an integer");
  return static_cast<int>(x);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v.front() == '-')
    throw std::invalid_argument("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects true or false");
}

std::vector<std::pair<std::string, std::string>> config_lines(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty() || t.front() == '[') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(std::string_view text, TrainConfig base) {
  const auto lines = config_lines(text);
  TrainConfig c = base;
  for (const auto& [k, v] : lines)
    if (k == "preset" || k == "scale_preset") c = preset_config(v);
  for (const auto& [k, v] : lines) {
    if (k == "preset" || k == "scale_preset") continue;
    if (k == "n_tasks") c.n_tasks = to_int(k, v);
    else if (k == "n_particles") c.n_particles = to_int(k, v);
    else if (k == "delta_lambda") c.delta_lambda = to_double(k, v);
    else if (k == "epochs") c.epochs = to_int(k, v);
    else if (k == "batch_tasks") c.batch_tasks = to_int(k, v);
    else if (k == "lr") c.adam.learning_rate = to_double(k, v);
    else if (k == "lr_decay") c.adam.decay = to_double(k, v);
    else if (k == "lr_decay_period") c.adam.decay_period = to_int(k, v);
    else if (k == "clip") c.adam.clip_norm = to_double(k, v);
    else if (k == "beta1") c.adam.beta1 = to_double(k, v);
    else if (k == "beta2") c.adam.beta2 = to_double(k, v);
    else if (k == "epsilon") c.adam.epsilon = to_double(k, v);
    else if (k == "seed") c.seed = to_u64(k, v);
    else if (k == "hidden_layers") c.hidden_layers = to_int(k, v);
    else if (k == "hidden_width") c.hidden_width = to_int(k, v);
    else if (k == "drop_gradients") c.drop_gradients = to_bool(k, v);
    else if (k == "update_per_step") c.update_per_step = to_bool(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = to_int(k, v);
    else throw std::invalid_argument("config: unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream o;
  o << "preset = " << c.preset << '\n'
    << "n_tasks = " << c.n_tasks << '\n'
    << "n_particles = " << c.n_particles << '\n'
    << "delta_lambda = " << fmt(c.delta_lambda) << '\n'
    << "epochs = " << c.epochs << '\n'
    << "batch_tasks = " << c.batch_tasks << '\n'
    << "lr = " << fmt(c.adam.learning_rate) << '\n'
    << "lr_decay = " << fmt(c.adam.decay) << '\n'
    << "lr_decay_period = " << c.adam.decay_period << '\n'
    << "clip = " << fmt(c.adam.clip_norm) << '\n'
    << "beta1 = " << fmt(c.adam.beta1) << '\n'
    << "beta2 = " << fmt(c.adam.beta2) << '\n'
    << "epsilon = " << fmt(c.adam.epsilon) << '\n'
    << "seed = " << c.seed << '\n'
    << "hidden_layers = " << c.hidden_layers << '\n'
    << "hidden_width = " << c.hidden_width << '\n'
    << "drop_gradients = " << (c.drop_gradients ? "true" : "false") << '\n'
    << "update_per_step = " << (c.update_per_step ? "true" : "false") << '\n'
    << "checkpoint_every = " << c.checkpoint_every << '\n';
  return o.str();
}

TrajectoryGradient trajectory_gradient(const Task& task, const FlowNetwork& net, const FeatureLayout& layout,
                                       Mat particles, double delta_lambda, std::span<const double> step_weights) {
  TrainConfig probe;
  probe.delta_lambda = delta_lambda;
  const int steps = probe.steps();
  if (!step_weights.empty() && static_cast<int>(step_weights.size()) != steps)
    throw std::invalid_argument("step_weights must have one entry per step");

  TrajectoryGradient out;
  out.grads = Parameters::zeros_like(net.params());
  out.step_losses.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    const double lambda = k * delta_lambda;
    const double w = step_weights.empty() ? 1.0 : step_weights[k];
    StepGradient g;
    try {
      g = step_loss_gradient(task, net, layout, particles, lambda, w);
      if (!g.grads.all_finite()) throw std::domain_error("task " + task.id + ": non-finite step gradient");
    } catch (const std::domain_error&) {
      if (k == 0) throw;
      out.truncated_at = k;
      break;
    }
    out.step_losses.push_back(g.loss);
    out.total_loss += g.loss;
    out.grads.add_scaled(g.grads, 1.0);
    // The new state is a plain value: nothing links it back to this step.
    particles += g.velocity * delta_lambda;
  }
  out.final_particles = std::move(particles);
  return out;
}

Mat training_particles(const Task& task, const TrainConfig& config, int epoch, std::size_t task_index) {
  Rng rng = Rng(config.seed).split(static_cast<std::uint64_t>(epoch) + 1).split(task_index);
  return sample(task.prior, config.n_particles, rng).particles;
}

TrainState initial_state(const FeatureLayout& layout, const TrainConfig& config) {
  TrainState s;
  s.net = FlowNetwork::init(layout.network_widths(config.hidden_layers, config.hidden_width),
                            Rng::mix(config.seed ^ 0x6e6574ULL));
  s.optimizer = OptimizerState::for_network(s.net, config.adam);
  return s;
}

namespace {

std::vector<Task> used_tasks(const std::vector<Task>& dataset, const TrainConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");
  std::size_t n = dataset.size();
  if (config.n_tasks > 0) n = std::min<std::size_t>(n, config.n_tasks);
  std::vector<Task> tasks(dataset.begin(), dataset.begin() + static_cast<std::ptrdiff_t>(n));
  const auto d = tasks.front().state_dim();
  const auto nz = tasks.front().measurement_dim();
  for (const Task& t : tasks)
    if (t.state_dim() != d || t.measurement_dim() != nz)
      throw std::invalid_argument("task " + t.id + " has dimensions different from the rest of the dataset");
  return tasks;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed ^ 0x5368756666ULL).split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

[[noreturn]] void rethrow_with_context(int epoch, const Task& task) {
  try {
    throw;
  } catch (const std::exception& e) {
    const std::string what = e.what();
    const std::string prefix = "task " + task.id + ": ";
    const std::string detail = what.starts_with(prefix) ? what.substr(prefix.size()) : what;
    throw std::runtime_error("epoch " + std::to_string(epoch) + ", " + prefix + detail);
  }
}

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

// Sum of per-task gradients in task order, divided by the batch size.
Parameters batch_mean(const std::vector<Parameters>& grads) {
  Parameters total = Parameters::zeros_like(grads.front());
  for (const Parameters& g : grads) total.add_scaled(g, 1.0);
  total.scale(1.0 / static_cast<double>(grads.size()));
  return total;
}

// One batch, one update after every trajectory is finished.
double run_batch(const std::vector<Task>& tasks, const std::vector<std::size_t>& members, const TrainConfig& config,
                 const FeatureLayout& layout, TrainState& state, int epoch, int& truncated) {
  std::vector<Parameters> grads(members.size());
  std::vector<double> losses(members.size());
  std::vector<char> cut(members.size(), 0);
  parallel_for(members.size(), [&](std::size_t b) {
    const Task& task = tasks[members[b]];
    try {
      TrajectoryGradient g = trajectory_gradient(task, state.net, layout,
                                                 training_particles(task, config, epoch, members[b]),
                                                 config.delta_lambda);
      grads[b] = std::move(g.grads);
      losses[b] = g.total_loss;
      cut[b] = g.truncated_at >= 0;
    } catch (...) {
      rethrow_with_context(epoch, task);
    }
  });
  adam_step(state.net, batch_mean(grads), state.optimizer, epoch);
  truncated += static_cast<int>(std::count(cut.begin(), cut.end(), 1));
  return std::accumulate(losses.begin(), losses.end(), 0.0);
}

// Alternative cadence: one update after every Euler step.
double run_batch_per_step(const std::vector<Task>& tasks, const std::vector<std::size_t>& members,
                          const TrainConfig& config, const FeatureLayout& layout, TrainState& state, int epoch) {
  const std::size_t m = members.size();
  std::vector<Mat> particles(m);
  for (std::size_t b = 0; b < m; ++b) particles[b] = training_particles(tasks[members[b]], config, epoch, members[b]);
  std::vector<double> totals(m, 0.0);
  std::vector<Parameters> grads(m);
  const int steps = config.steps();
  for (int k = 0; k < steps; ++k) {
    const double lambda = k * config.delta_lambda;
    parallel_for(m, [&](std::size_t b) {
      const Task& task = tasks[members[b]];
      try {
        StepGradient g = step_loss_gradient(task, state.net, layout, particles[b], lambda);
        totals[b] += g.loss;
        grads[b] = std::move(g.grads);
        particles[b] += g.velocity * config.delta_lambda;
      } catch (...) {
        rethrow_with_context(epoch, task);
      }
    });
    adam_step(state.net, batch_mean(grads), state.optimizer, epoch);
  }
  return std::accumulate(totals.begin(), totals.end(), 0.0);
}

}  // namespace

double validation_energy_distance(const std::vector<Task>& tasks, const FlowNetwork& net, const FeatureLayout& layout,
                                  std::uint64_t seed) {
  const std::size_t n = std::min<std::size_t>(10, tasks.size());
  if (n == 0) throw std::invalid_argument("validation needs at least one task");
  std::vector<double> ed(n);
  parallel_for(n, [&](std::size_t i) {
    const Task& task = tasks[i];
    const std::uint64_t s = task_seed(task.id, seed);
    try {
      const EnergyReference ref(ground_truth_sample(task, 2000, s ^ 0x7661ULL).particles);
      ed[i] = ref.distance(transport(task, net, layout, inference_preset(task.family), s).ensemble.particles);
    } catch (const std::exception&) {
      ed[i] = std::numeric_limits<double>::infinity();
    }
  });
  return std::accumulate(ed.begin(), ed.end(), 0.0) / static_cast<double>(n);
}

TrainResult train(const std::vector<Task>& dataset, const TrainConfig& config, const TrainHooks& hooks,
                  std::optional<TrainState> resume_from, const std::vector<Task>& validation) {
  config.validate();
  const std::vector<Task> tasks = used_tasks(dataset, config);
  const FeatureLayout layout = FeatureLayout::for_task(tasks.front(), !config.drop_gradients);

  TrainResult result;
  result.layout = layout;
  if (resume_from) {
    layout.check_compatible(resume_from->net);
    result.state = std::move(*resume_from);
    result.state.optimizer.config = config.adam;
  } else {
    result.state = initial_state(layout, config);
  }
  TrainState& state = result.state;

  const std::size_t batch = static_cast<std::size_t>(config.batch_tasks);
  for (int epoch = state.next_epoch; epoch < config.epochs; ++epoch) {
    const double t0 = now_ms();
    const std::vector<std::size_t> order = epoch_order(tasks.size(), config.seed, epoch);
    double loss_sum = 0.0;
    int truncated = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
      loss_sum += config.update_per_step ? run_batch_per_step(tasks, members, config, layout, state, epoch)
                                         : run_batch(tasks, members, config, layout, state, epoch, truncated);
    }
    state.next_epoch = epoch + 1;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(tasks.size());
    rec.lr = learning_rate_at(config.adam, epoch);
    rec.truncated = truncated;
    const bool checkpoint = (epoch + 1) % config.checkpoint_every == 0 || epoch + 1 == config.epochs;
    if (checkpoint && hooks.on_checkpoint) rec.checkpoint = hooks.on_checkpoint(epoch, state);
    if (checkpoint && !validation.empty()) {
      const double ed = validation_energy_distance(validation, state.net, layout, config.seed);
      const bool improved = !result.best_net || ed < result.best_validation_ed;
      if (improved) {
        result.best_net = state.net;
        result.best_epoch = epoch;
        result.best_validation_ed = ed;
      }
      if (hooks.on_validation) hooks.on_validation(epoch, ed, improved, state);
    }
    rec.wall_ms = now_ms() - t0;
    if (hooks.on_epoch) hooks.on_epoch(rec);
    result.log.records.push_back(std::move(rec));
  }
  return result;
}

double evaluate_loss(const std::vector<Task>& dataset, const FlowNetwork& net, const FeatureLayout& layout,
                     const TrainConfig& config, int epoch) {
  const std::vector<Task> tasks = used_tasks(dataset, config);
  std::vector<double> losses(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    Mat x = training_particles(tasks[i], config, epoch, i);
    double total = 0.0;
    const int steps = config.steps();
    for (int k = 0; k < steps; ++k) {
      const double lambda = k * config.delta_lambda;
      const FeatureBatch batch = build_features(tasks[i], x, lambda, layout);
      const FieldEvaluation field = evaluate_network_field(net, batch);
      total += residual_terms(batch.log_h, batch.score_p, field).squaredNorm() / static_cast<double>(x.cols());
      x += field.velocity * config.delta_lambda;
    }
    losses[i] = total;
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(tasks.size());
}

AblationResult ablate_features(const std::vector<Task>& dataset, const std::vector<Task>& heldout,
                               const TrainConfig& config, const TransportConfig& transport_config,
                               int reference_samples, std::uint64_t seed, const std::vector<Task>& validation) {
  if (heldout.empty()) throw std::invalid_argument("ablation needs held-out tasks");
  AblationResult out;
  TrainConfig full = config;
  full.drop_gradients = false;
  TrainConfig reduced = config;
  reduced.drop_gradients = true;
  out.full = train(dataset, full, {}, std::nullopt, validation);
  out.gradient_free = train(dataset, reduced, {}, std::nullopt, validation);

  out.ed_full.resize(heldout.size());
  out.ed_gradient_free.resize(heldout.size());
  parallel_for(heldout.size(), [&](std::size_t i) {
    const Task& task = heldout[i];
    const std::uint64_t s = task_seed(task.id, seed);
    const Ensemble reference = ground_truth_sample(task, reference_samples, s ^ 0x7265ULL);
    const EnergyReference ref(reference.particles);
    const TransportResult a = transport(task, out.full.selected_net(), out.full.layout, transport_config, s);
    const TransportResult b = transport(task, out.gradient_free.selected_net(), out.gradient_free.layout,
                                        transport_config, s);
    out.ed_full[i] = ref.distance(a.ensemble.particles);
    out.ed_gradient_free[i] = ref.distance(b.ensemble.particles);
  });
  return out;
}

}  // namespace pinflow
