#include "pinflow/evaluation.hpp"

#include "pinflow/parallel.hpp"
#include "pinflow/rng.hpp"
#include "pinflow/taskgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace pinflow {

std::string_view method_name(Method method) {
  switch (method) {
    case Method::pinpf: return "pinpf";
    case Method::svgd: return "svgd";
    case Method::annealed_mala: return "annealed_mala";
    case Method::oracle: return "oracle";
  }
  return "unknown";
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::pinpf, Method::svgd, Method::annealed_mala, Method::oracle})
    if (method_name(m) == name) return m;
  return std::nullopt;
}

std::vector<Method> parse_methods(std::string_view list) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t comma = std::min(list.find(',', start), list.size());
    const std::string_view item = list.substr(start, comma - start);
    if (!item.empty()) {
      const auto m = parse_method(item);
      if (!m) throw std::invalid_argument("unknown method '" + std::string(item) + "'");
      if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
    }
    start = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("no methods given");
  return out;
}

namespace {

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void str(std::string_view s) { bytes(s.data(), s.size()); }
  template <class T>
  void value(T v) {
    bytes(&v, sizeof v);
  }
};

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double now_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

std::uint64_t method_seed(std::uint64_t task_seed_value, Method m) {
  return Rng::mix(task_seed_value + 0x1000 * (static_cast<std::uint64_t>(m) + 1));
}

}  // namespace

std::string config_hash(const EvalConfig& c) {
  Fnv f;
  for (Method m : c.methods) f.str(method_name(m));
  f.value(c.seed);
  if (c.transport) {
    f.value(c.transport->delta_L);
    f.value(c.transport->n_particles);
    f.value(c.transport->max_nfe);
  }
  f.value(c.svgd.n_particles);
  f.value(c.svgd.iterations);
  f.value(c.svgd.learning_rate);
  f.value(c.anneal.n_particles);
  f.value(c.anneal.beta_steps);
  f.value(c.anneal.inner_iterations);
  f.value(c.anneal.step_size);
  f.value(c.metrics.swd_projections);
  f.value(c.metrics.swd_order);
  f.value(c.metrics.gt_samples);
  if (c.net != nullptr) {
    for (int w : c.net->widths()) f.value(w);
    const Parameters& p = c.net->params();
    for (std::size_t i = 0; i < p.size(); ++i) f.value(p.at(i));
  }
  if (c.layout) f.value(static_cast<int>(c.layout->with_gradients));
  return hex16(f.h);
}

EvalResult evaluate(const std::vector<Task>& tasks, const EvalConfig& config) {
  config.metrics.validate();
  const bool needs_net = std::find(config.methods.begin(), config.methods.end(), Method::pinpf) != config.methods.end();
  if (needs_net && config.net == nullptr) throw std::invalid_argument("pinpf evaluation needs a checkpoint");
  for (const Task& t : tasks)
    if (std::holds_alternative<std::monostate>(t.truth))
      throw std::runtime_error("task " + t.id + " has no ground truth");
  const std::string hash = config_hash(config);
  if (config.particle_dir) std::filesystem::create_directories(*config.particle_dir);

  // Reference draws, one set per task.
  std::vector<std::optional<EnergyReference>> refs(tasks.size());
  std::vector<Warnings> task_warnings(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const std::uint64_t s = task_seed(tasks[i].id, config.seed);
    Ensemble gt = ground_truth_sample(tasks[i], config.metrics.gt_samples, s ^ 0x6774ULL, &task_warnings[i]);
    refs[i].emplace(std::move(gt.particles));
  });

  const std::size_t n_methods = config.methods.size();
  EvalResult result;
  result.rows.resize(tasks.size() * n_methods);
  std::vector<Mat> ensembles(result.rows.size());
  std::vector<Warnings> pair_warnings(result.rows.size());

  parallel_for(result.rows.size(), [&](std::size_t idx) {
    const Task& task = tasks[idx / n_methods];
    const Method method = config.methods[idx % n_methods];
    const EnergyReference& ref = *refs[idx / n_methods];
    const TransportConfig tc = config.transport.value_or(inference_preset(task.family));
    ReportRow& row = result.rows[idx];
    row.task_id = task.id;
    row.method = method;
    row.seed = method_seed(task_seed(task.id, config.seed), method);
    row.config_hash = hash;
    try {
      const double t0 = now_ms();
      Mat x;
      switch (method) {
        case Method::pinpf: {
          const FeatureLayout layout = config.layout.value_or(FeatureLayout::for_task(task));
          TransportResult r = transport(task, *config.net, layout, tc, row.seed);
          row.nfe = r.nfe;
          x = std::move(r.ensemble.particles);
          break;
        }
        case Method::svgd: {
          SvgdConfig c = config.svgd;
          c.n_particles = tc.n_particles;
          x = svgd(task, c, row.seed).particles;
          break;
        }
        case Method::annealed_mala: {
          AnnealConfig c = config.anneal;
          c.n_particles = tc.n_particles;
          x = annealed_mcmc(task, c, row.seed, &pair_warnings[idx]).particles;
          break;
        }
        case Method::oracle:
          x = ground_truth_sample(task, tc.n_particles, row.seed).particles;
          break;
      }
      row.wall_ms = config.zero_wall_time ? 0.0 : now_ms() - t0;
      if (!x.allFinite()) throw std::runtime_error("non-finite particles");
      row.energy_distance = ref.distance(x);
      const Mat& gt = ref.samples();
      if (gt.cols() >= x.cols())
        row.swd = sliced_wasserstein(x, downsample(gt, x.cols(), row.seed ^ 0x7377ULL), config.metrics, row.seed);
      else
        row.swd = sliced_wasserstein(downsample(x, gt.cols(), row.seed ^ 0x7377ULL), gt, config.metrics, row.seed);
      ensembles[idx] = std::move(x);
    } catch (const std::exception& e) {
      row.error = e.what();
      row.energy_distance = row.swd = std::numeric_limits<double>::quiet_NaN();
      row.nfe.reset();
      if (config.zero_wall_time) row.wall_ms = 0.0;
    }
  });

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (const std::string& w : task_warnings[i]) result.warnings.push_back(tasks[i].id + ": " + w);
    for (std::size_t m = 0; m < n_methods; ++m)
      for (const std::string& w : pair_warnings[i * n_methods + m]) result.warnings.push_back(tasks[i].id + ": " + w);
  }

  if (config.particle_dir) {
    const auto& dir = *config.particle_dir;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const Mat& gt = refs[i]->samples();
      write_ensemble_csv(dir / (tasks[i].id + "_gt.csv"), gt);
      std::vector<std::pair<std::string, Mat>> sets{{"ground truth", gt}};
      for (std::size_t m = 0; m < n_methods; ++m) {
        const std::size_t idx = i * n_methods + m;
        if (!result.rows[idx].error.empty()) continue;
        const std::string name(method_name(config.methods[m]));
        write_ensemble_csv(dir / (tasks[i].id + "_" + name + ".csv"), ensembles[idx]);
        sets.emplace_back(name, ensembles[idx]);
      }
      write_scatter_svg(dir / (tasks[i].id + ".svg"), sets);
    }
  }
  return result;
}

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  std::vector<SummaryRow> out;
  for (const ReportRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back(SummaryRow{r.method});
      it = out.end() - 1;
    }
    if (!r.error.empty()) {
      ++it->n_failed;
      continue;
    }
    ++it->n_ok;
    it->energy_distance += r.energy_distance;
    it->swd += r.swd;
    it->wall_ms += r.wall_ms;
  }
  for (SummaryRow& s : out) {
    const double n = s.n_ok > 0 ? s.n_ok : std::numeric_limits<double>::quiet_NaN();
    s.energy_distance /= n;
    s.swd /= n;
    s.wall_ms /= n;
  }
  return out;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else if (c == '\n' || c == '\r') out += ' ';
    else out += c;
  }
  return out + "\"";
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows, int swd_order) {
  std::ofstream out = open_out(path);
  out << "# pinflow report v" << kReportSchemaVersion << " swd_order=" << swd_order << '\n';
  out << "task_id,method,energy_distance,swd,nfe,wall_ms,seed,config_hash,error\n";
  for (const ReportRow& r : rows) {
    out << csv_field(r.task_id) << ',' << method_name(r.method) << ',' << num(r.energy_distance) << ','
        << num(r.swd) << ',' << (r.nfe ? std::to_string(*r.nfe) : "") << ',' << num(r.wall_ms) << ',' << r.seed
        << ',' << r.config_hash << ',' << csv_field(r.error) << '\n';
  }
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& summary) {
  std::ofstream out = open_out(path);
  out << "method,ED,SWD,time\n";
  for (const SummaryRow& s : summary)
    out << method_name(s.method) << ',' << num(s.energy_distance) << ',' << num(s.swd) << ','
        << num(s.wall_ms / 1000.0) << '\n';
  out.close();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace pinflow
