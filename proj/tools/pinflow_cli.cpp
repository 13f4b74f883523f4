// pinflow: dataset generation, training, evaluation and trajectory export.

#include "pinflow/evaluation.hpp"
#include "pinflow/parallel.hpp"
#include "pinflow/taskgen.hpp"
#include "pinflow/trainer.hpp"
#include "pinflow/transporter.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace pinflow;
using Json = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A dataset argument may name a split file or a directory holding one.
std::vector<Task> load_split(const std::string& path, const std::string& default_split) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= default_split + ".ndjson";
  if (!fs::exists(p)) throw UsageError("dataset not found: " + p.string());
  return read_ndjson(p);
}

Json config_json(const TrainConfig& c) {
  Json j;
  j["preset"] = c.preset;
  j["n_tasks"] = c.n_tasks;
  j["n_particles"] = c.n_particles;
  j["delta_lambda"] = c.delta_lambda;
  j["steps"] = c.steps();
  j["epochs"] = c.epochs;
  j["batch_tasks"] = c.batch_tasks;
  j["lr"] = c.adam.learning_rate;
  j["lr_decay"] = c.adam.decay;
  j["lr_decay_period"] = c.adam.decay_period;
  j["clip"] = c.adam.clip_norm;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["epsilon"] = c.adam.epsilon;
  j["seed"] = c.seed;
  j["hidden_layers"] = c.hidden_layers;
  j["hidden_width"] = c.hidden_width;
  j["activation"] = "silu";
  j["drop_gradients"] = c.drop_gradients;
  j["update_per_step"] = c.update_per_step;
  j["checkpoint_every"] = c.checkpoint_every;
  return j;
}

fs::path state_path(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".state"); }

struct GenArgs {
  std::string family;
  int n = 1200;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenArgs& a) {
  const auto family = parse_family(a.family);
  if (!family) throw UsageError("unknown family '" + a.family + "' (expected gauss1d, gmm4d, gmm4d_ood or tdoa)");
  if (a.n < 1) throw UsageError("--n must be positive");
  write_dataset(a.out, *family, a.n, a.seed);
  const SplitCounts c = split_counts(*family, a.n);
  std::printf("wrote %s: train %d, val %d, test %d\n", a.out.c_str(), c.train, c.val, c.test);
  return 0;
}

struct TrainArgs {
  std::string dataset;
  std::string config;
  std::string preset = "paper";
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string log;
  std::string val;
  bool resume = false;
  bool deterministic = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig config;
  try {
    config = preset_config(a.preset);
    if (!a.config.empty()) config = load_train_config(a.config, config);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.seed) config.seed = *a.seed;
  config.validate();

  const std::vector<Task> dataset = load_split(a.dataset, "train");
  std::vector<Task> val;
  if (!a.val.empty()) val = load_split(a.val, "val");

  const fs::path out(a.out);
  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.ndjson") : fs::path(a.log);
  const fs::path best_path(a.out + ".best");

  std::optional<TrainState> resume;
  if (a.resume) {
    if (!fs::exists(out) || !fs::exists(state_path(out)))
      throw UsageError("--resume needs " + out.string() + " and " + state_path(out).string());
    TrainState s;
    s.net = load_checkpoint(out);
    s.optimizer = load_trainer_state(state_path(out), s.net, &s.next_epoch);
    resume = std::move(s);
  }

  std::ofstream log(log_path, a.resume ? std::ios::binary | std::ios::app : std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write log " + log_path.string());
  if (!a.resume) {
    Json header;
    header["header"] = config_json(config);
    header["header"]["dataset"] = a.dataset;
    header["header"]["n_train_tasks"] = dataset.size();
    log << header.dump() << '\n' << std::flush;
  }

  const FeatureLayout layout = FeatureLayout::for_task(dataset.front(), !config.drop_gradients);
  TrainHooks hooks;
  hooks.on_checkpoint = [&](int, const TrainState& s) {
    save_checkpoint(out, s.net, layout.checkpoint_info());
    save_trainer_state(state_path(out), s.optimizer, s.next_epoch);
    // Relative to the log so identical runs in different directories match.
    return fs::proximate(out, fs::absolute(log_path).parent_path()).generic_string();
  };
  double best = std::numeric_limits<double>::infinity();
  hooks.on_validation = [&](int epoch, double ed, bool improved, const TrainState& s) {
    if (improved) {
      best = ed;
      save_checkpoint(best_path, s.net, layout.checkpoint_info());
    }
    if (!a.quiet) std::printf("epoch %d: validation ED %.5f (best %.5f)\n", epoch, ed, best);
  };
  hooks.on_epoch = [&](const EpochRecord& r) {
    Json j;
    j["epoch"] = r.epoch;
    j["loss"] = r.loss;
    j["lr"] = r.lr;
    j["wall_ms"] = a.deterministic ? 0.0 : r.wall_ms;
    if (!r.checkpoint.empty()) j["checkpoint"] = r.checkpoint;
    if (r.truncated > 0) j["truncated"] = r.truncated;
    log << j.dump() << '\n' << std::flush;
    if (!a.quiet && (r.epoch % 10 == 0 || r.epoch + 1 == config.epochs))
      std::printf("epoch %d loss %.6g lr %.4g\n", r.epoch, r.loss, r.lr);
  };
  const TrainResult result = train(dataset, config, hooks, std::move(resume), val);
  if (result.log.records.empty()) std::printf("nothing to do: training already reached epoch %d\n", config.epochs);
  std::printf("checkpoint %s\n", out.string().c_str());
  return 0;
}

struct EvalArgs {
  std::string split;
  std::string methods = "pinpf,svgd,annealed_mala";
  std::string checkpoint;
  std::string out;
  std::string particles;
  std::uint64_t seed = 0;
  int limit = 0;
  int swd_order = 2;
  bool deterministic = false;
};

int cmd_eval(const EvalArgs& a) {
  EvalConfig ec;
  try {
    ec.methods = parse_methods(a.methods);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::vector<Task> tasks = load_split(a.split, "test");
  if (a.limit > 0 && static_cast<std::size_t>(a.limit) < tasks.size()) tasks.erase(tasks.begin() + a.limit, tasks.end());

  FlowNetwork net;
  const bool needs_net = std::find(ec.methods.begin(), ec.methods.end(), Method::pinpf) != ec.methods.end();
  if (needs_net) {
    if (a.checkpoint.empty()) throw UsageError("method pinpf needs --checkpoint");
    CheckpointInfo info;
    net = load_checkpoint(a.checkpoint, &info);
    ec.net = &net;
    ec.layout = FeatureLayout::from_checkpoint(net, info);
  }
  ec.seed = a.seed;
  ec.metrics.swd_order = a.swd_order;
  ec.zero_wall_time = a.deterministic;
  if (!a.particles.empty()) ec.particle_dir = fs::path(a.particles);

  const EvalResult r = evaluate(tasks, ec);
  for (const std::string& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  write_report_csv(a.out, r.rows, ec.metrics.swd_order);
  const auto summary = summarize(r.rows);
  write_summary_csv(a.out + ".summary.csv", summary);
  std::printf("%-14s %10s %10s %10s\n", "method", "ED", "SWD", "time[s]");
  for (const SummaryRow& s : summary)
    std::printf("%-14s %10.4f %10.4f %10.4f%s\n", std::string(method_name(s.method)).c_str(), s.energy_distance,
                s.swd, s.wall_ms / 1000.0, s.n_failed ? "  (some tasks failed)" : "");
  return 0;
}

struct TrajectoryArgs {
  std::string dataset;
  std::string task;
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  int n_particles = 0;
  double delta_L = 0.0;
};

int cmd_trajectory(const TrajectoryArgs& a) {
  const std::vector<Task> tasks = load_split(a.dataset, "test");
  const auto it = std::find_if(tasks.begin(), tasks.end(), [&](const Task& t) { return t.id == a.task; });
  if (it == tasks.end()) throw UsageError("task '" + a.task + "' not in " + a.dataset);
  CheckpointInfo info;
  const FlowNetwork net = load_checkpoint(a.checkpoint, &info);
  const FeatureLayout layout = FeatureLayout::from_checkpoint(net, info);
  TransportConfig tc = inference_preset(it->family);
  if (a.n_particles > 0) tc.n_particles = a.n_particles;
  if (a.delta_L > 0.0) tc.delta_L = a.delta_L;
  tc.record_trajectory = true;
  const TransportResult r = transport(*it, net, layout, tc, task_seed(it->id, a.seed));
  write_trajectory_csv(a.out, r);
  std::printf("%s: %d steps, %zu rows\n", a.out.c_str(), r.nfe, r.trajectory.size() * static_cast<std::size_t>(tc.n_particles));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural particle flow toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a task dataset (train/val/test NDJSON + manifest)");
  g->add_option("family", gen.family, "gauss1d, gmm4d, gmm4d_ood or tdoa")->required();
  g->add_option("--n", gen.n, "Total number of tasks");
  g->add_option("--seed", gen.seed, "Master seed");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "Train a flow network");
  t->add_option("dataset", tr.dataset, "Training split file or dataset directory")->required();
  t->add_option("--config", tr.config, "key = value config file applied over the preset");
  t->add_option("--preset", tr.preset, "paper, desk or smoke")->check(CLI::IsMember({"paper", "desk", "smoke"}));
  auto* seed_opt = t->add_option("--seed", train_seed, "Training seed");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--log", tr.log, "NDJSON log path (default <out>.log.ndjson)");
  t->add_option("--val", tr.val, "Validation split for best-checkpoint selection (<out>.best)");
  t->add_flag("--resume", tr.resume, "Continue from <out> and <out>.state");
  t->add_flag("--deterministic", tr.deterministic, "Write zero wall times so logs are byte-stable");
  t->add_flag("--quiet", tr.quiet, "Suppress progress output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate methods against reference posteriors");
  e->add_option("split", ev.split, "Split file or dataset directory (default split: test)")->required();
  e->add_option("--methods", ev.methods, "Comma-separated: pinpf, svgd, annealed_mala, oracle");
  e->add_option("--checkpoint", ev.checkpoint, "Network checkpoint (required for pinpf)");
  e->add_option("--out", ev.out, "Report CSV path")->required();
  e->add_option("--particles", ev.particles, "Directory for per-task particle CSVs and SVG scatters");
  e->add_option("--seed", ev.seed, "Evaluation seed");
  e->add_option("--limit", ev.limit, "Use only the first N tasks");
  e->add_option("--swd-order", ev.swd_order, "Sliced Wasserstein order (1 or 2)")->check(CLI::IsMember({1, 2}));
  e->add_flag("--deterministic", ev.deterministic, "Write zero wall times so reports are byte-stable");

  TrajectoryArgs tj;
  auto* j = app.add_subcommand("trajectory", "Export per-step particle states of one transport");
  j->add_option("dataset", tj.dataset, "Split file or dataset directory (default split: test)")->required();
  j->add_option("--task", tj.task, "Task id")->required();
  j->add_option("--checkpoint", tj.checkpoint, "Network checkpoint")->required();
  j->add_option("--out", tj.out, "Trajectory CSV path")->required();
  j->add_option("--seed", tj.seed, "Seed for the initial prior draw");
  j->add_option("--n-particles", tj.n_particles, "Override the family's particle count");
  j->add_option("--delta-L", tj.delta_L, "Override the family's displacement bound");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 2;
  }

  try {
    if (*g) return cmd_gen(gen);
    if (*t) {
      if (*seed_opt) tr.seed = train_seed;
      return cmd_train(tr);
    }
    if (*e) return cmd_eval(ev);
    if (*j) return cmd_trajectory(tj);
  } catch (const UsageError& err) {
    std::fprintf(stderr, "usage error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 2;
}
