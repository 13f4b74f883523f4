#include "pinflow/taskgen.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pinflow {

using Json = nlohmann::ordered_json;

std::string_view family_name(Family family) {
  switch (family) {
    case Family::gauss1d: return "gauss1d";
    case Family::gmm4d: return "gmm4d";
    case Family::gmm4d_ood: return "gmm4d_ood";
    case Family::tdoa: return "tdoa";
  }
  return "unknown";
}

std::optional<Family> parse_family(std::string_view name) {
  for (Family f : {Family::gauss1d, Family::gmm4d, Family::gmm4d_ood, Family::tdoa})
    if (family_name(f) == name) return f;
  return std::nullopt;
}

namespace {

std::string task_id(const std::string& prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", index);
  return prefix + "-" + buf;
}

Vec uniform_vec(Rng& rng, int n, double lo, double hi) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

GaussianMixture gmm_likelihood(Rng& rng, int d, int components) {
  std::vector<DiagGaussian> comps;
  for (int k = 0; k < components; ++k) {
    Vec mean = uniform_vec(rng, d, -3.0, 3.0);
    Vec var = uniform_vec(rng, d, 0.3 * 0.3, 0.7 * 0.7);
    comps.emplace_back(std::move(mean), std::move(var));
  }
  return GaussianMixture(std::vector<double>(static_cast<std::size_t>(components), 1.0 / components),
                         std::move(comps));
}

/// z slot for state-space mixture likelihoods: flattened component means.
Vec flattened_means(const GaussianMixture& mix) {
  const Eigen::Index d = mix.dim();
  Vec z(d * static_cast<Eigen::Index>(mix.components().size()));
  for (std::size_t k = 0; k < mix.components().size(); ++k)
    z.segment(static_cast<Eigen::Index>(k) * d, d) = mix.components()[k].mean();
  return z;
}

}  // namespace

std::vector<Task> gen_gauss1d(int n_tasks, std::uint64_t seed, const std::string& id_prefix) {
  if (n_tasks < 1) throw std::invalid_argument("gen_gauss1d: n_tasks must be positive");
  std::vector<Task> tasks;
  const Rng master(seed);
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng = master.split(static_cast<std::uint64_t>(t));
    const double prior_mean = rng.uniform(-1.0, 1.0);
    const double prior_var = rng.uniform(1.0, 4.0);
    const double lik_var = rng.uniform(0.5, 2.0);
    const double truth = rng.normal(prior_mean, std::sqrt(prior_var));
    const double z = rng.normal(truth, std::sqrt(lik_var));
    DiagGaussian prior(Vec::Constant(1, prior_mean), Vec::Constant(1, prior_var));
    GaussianMixture lik({1.0}, {DiagGaussian(Vec::Constant(1, z), Vec::Constant(1, lik_var))});
    GaussianMixture post = conjugate_posterior(prior, lik);
    tasks.push_back(Task{task_id(id_prefix, t), Family::gauss1d, prior, lik, Vec::Constant(1, z), post});
  }
  return tasks;
}

std::vector<Task> gen_gmm4d(int n_tasks, std::uint64_t seed, const std::string& id_prefix) {
  if (n_tasks < 1) throw std::invalid_argument("gen_gmm4d: n_tasks must be positive");
  std::vector<Task> tasks;
  const Rng master(seed);
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng = master.split(static_cast<std::uint64_t>(t));
    DiagGaussian prior(Vec::Zero(4), uniform_vec(rng, 4, 1.0, 10.0));
    GaussianMixture lik = gmm_likelihood(rng, 4, 3);
    Vec z = flattened_means(lik);
    GaussianMixture post = conjugate_posterior(prior, lik);
    tasks.push_back(Task{task_id(id_prefix, t), Family::gmm4d, prior, lik, std::move(z), post});
  }
  return tasks;
}

std::vector<Task> gen_gmm4d_ood(int n_tasks, std::uint64_t seed, const std::string& id_prefix) {
  if (n_tasks < 1) throw std::invalid_argument("gen_gmm4d_ood: n_tasks must be positive");
  std::vector<Task> tasks;
  const Rng master(seed);
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng = master.split(static_cast<std::uint64_t>(t));
    std::vector<double> weights(3);
    double total = 0.0;
    for (double& w : weights) total += (w = rng.uniform(1e-3, 1.0));
    for (double& w : weights) w /= total;
    std::vector<DiagGaussian> comps;
    for (int k = 0; k < 3; ++k) {
      Vec mean(4);
      for (int i = 0; i < 4; ++i) mean[i] = rng.normal(0.0, 2.0);
      comps.emplace_back(std::move(mean), uniform_vec(rng, 4, 1.0, 5.0));
    }
    GaussianMixture prior(std::move(weights), std::move(comps));
    GaussianMixture lik = gmm_likelihood(rng, 4, 3);
    Vec z = flattened_means(lik);
    GaussianMixture post = conjugate_posterior(prior, lik);
    tasks.push_back(Task{task_id(id_prefix, t), Family::gmm4d_ood, prior, lik, std::move(z), post});
  }
  return tasks;
}

std::vector<Task> gen_tdoa(int n_tasks, std::uint64_t seed, const std::string& id_prefix) {
  if (n_tasks < 1) throw std::invalid_argument("gen_tdoa: n_tasks must be positive");
  std::vector<Task> tasks;
  const Rng master(seed);
  for (int t = 0; t < n_tasks; ++t) {
    Rng rng = master.split(static_cast<std::uint64_t>(t));
    const Eigen::Vector2d truth(rng.normal(4.0, 1.5), rng.normal(4.0, 1.5));
    const double noise = rng.uniform(0.4, 0.9);
    const double z = (truth - kSensorA).norm() - (truth - kSensorB).norm() + rng.normal(0.0, noise);
    const Eigen::Vector2d mean = truth + Eigen::Vector2d(rng.normal(0.0, 4.0), rng.normal(0.0, 5.0));
    Vec var(2);
    for (int i = 0; i < 2; ++i) {
      int attempts = 0;
      do {
        if (++attempts > 1000) throw std::runtime_error("gen_tdoa: prior variance rejection loop exhausted");
        var[i] = rng.normal(5.0, 1.0);
      } while (!(var[i] > 0.0));
    }
    DiagGaussian prior(mean, var);
    TdoaLikelihood lik(kSensorA, kSensorB, noise, z);
    tasks.push_back(Task{task_id(id_prefix, t), Family::tdoa, prior, lik, Vec::Constant(1, z), GridSpec{}});
  }
  return tasks;
}

std::vector<Task> generate(Family family, int n_tasks, std::uint64_t seed, const std::string& id_prefix) {
  switch (family) {
    case Family::gauss1d: return gen_gauss1d(n_tasks, seed, id_prefix);
    case Family::gmm4d: return gen_gmm4d(n_tasks, seed, id_prefix);
    case Family::gmm4d_ood: return gen_gmm4d_ood(n_tasks, seed, id_prefix);
    case Family::tdoa: return gen_tdoa(n_tasks, seed, id_prefix);
  }
  throw std::invalid_argument("generate: unknown family");
}

// ------------------------------------------------------------- ground truth

std::uint64_t task_seed(const std::string& task_id, std::uint64_t base_seed) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : task_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng::mix(h ^ Rng::mix(base_seed));
}

Ensemble ground_truth_sample(const Task& task, Eigen::Index n, std::uint64_t seed, Warnings* warnings) {
  if (const auto* mix = std::get_if<GaussianMixture>(&task.truth)) return sample(*mix, n, seed);
  if (const auto* grid = std::get_if<GridSpec>(&task.truth)) {
    const auto* prior = std::get_if<DiagGaussian>(&task.prior);
    const auto* lik = std::get_if<TdoaLikelihood>(&task.likelihood);
    if (prior == nullptr || lik == nullptr)
      throw std::invalid_argument("task " + task.id + ": grid ground truth needs a Gaussian prior and TDOA likelihood");
    return grid_posterior_sample(*prior, *lik, *grid, n, seed, warnings);
  }
  throw std::runtime_error("task " + task.id + ": no ground truth attached");
}

// ------------------------------------------------------------ serialization

namespace {

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec json_vec(const Json& a) {
  Vec v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a.at(i).get<double>();
  return v;
}

Json gaussian_json(const DiagGaussian& g) {
  Json j;
  j["mean"] = vec_json(g.mean());
  j["variances"] = vec_json(g.variances());
  return j;
}

DiagGaussian json_gaussian(const Json& j) { return DiagGaussian(json_vec(j.at("mean")), json_vec(j.at("variances"))); }

Json mixture_body(Json j, const GaussianMixture& m) {
  j["weights"] = m.weights();
  Json comps = Json::array();
  for (const auto& c : m.components()) comps.push_back(gaussian_json(c));
  j["components"] = std::move(comps);
  return j;
}

GaussianMixture json_mixture(const Json& j) {
  std::vector<DiagGaussian> comps;
  for (const auto& c : j.at("components")) comps.push_back(json_gaussian(c));
  return GaussianMixture(j.at("weights").get<std::vector<double>>(), std::move(comps));
}

Json density_json(const DensityModel& model) {
  return std::visit(
      [](const auto& m) -> Json {
        using T = std::decay_t<decltype(m)>;
        Json j;
        if constexpr (std::is_same_v<T, DiagGaussian>) {
          j["type"] = "diag_gaussian";
          j.update(gaussian_json(m));
        } else if constexpr (std::is_same_v<T, GaussianMixture>) {
          j["type"] = "gaussian_mixture";
          j = mixture_body(std::move(j), m);
        } else {
          j["type"] = "tdoa";
          j["sensor_a"] = {m.sensor_a()[0], m.sensor_a()[1]};
          j["sensor_b"] = {m.sensor_b()[0], m.sensor_b()[1]};
          j["noise_std"] = m.noise_std();
          j["measurement"] = m.measurement();
        }
        return j;
      },
      model);
}

DensityModel json_density(const Json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "diag_gaussian") return json_gaussian(j);
  if (type == "gaussian_mixture") return json_mixture(j);
  if (type == "tdoa") {
    const Vec a = json_vec(j.at("sensor_a"));
    const Vec b = json_vec(j.at("sensor_b"));
    if (a.size() != 2 || b.size() != 2) throw std::invalid_argument("tdoa sensors must be 2-vectors");
    return TdoaLikelihood(a, b, j.at("noise_std").get<double>(), j.at("measurement").get<double>());
  }
  throw std::invalid_argument("unknown density type '" + type + "'");
}

Json truth_json(const GroundTruth& truth) {
  if (const auto* mix = std::get_if<GaussianMixture>(&truth)) {
    Json j;
    j["type"] = "mixture";
    return mixture_body(std::move(j), *mix);
  }
  if (const auto* grid = std::get_if<GridSpec>(&truth)) {
    Json j;
    j["type"] = "grid";
    j["cells_per_axis"] = grid->cells_per_axis;
    j["half_width_sigmas"] = grid->half_width_sigmas;
    j["jitter"] = grid->jitter;
    return j;
  }
  return nullptr;
}

GroundTruth json_truth(const Json& j) {
  if (j.is_null()) return std::monostate{};
  const std::string type = j.at("type").get<std::string>();
  if (type == "mixture") return json_mixture(j);
  if (type == "grid")
    return GridSpec{j.at("cells_per_axis").get<int>(), j.at("half_width_sigmas").get<double>(),
                    j.value("jitter", true)};
  throw std::invalid_argument("unknown ground-truth type '" + type + "'");
}

}  // namespace

std::string serialize_task(const Task& task) {
  Json j;
  j["id"] = task.id;
  j["family"] = std::string(family_name(task.family));
  j["prior"] = density_json(task.prior);
  j["likelihood"] = density_json(task.likelihood);
  j["z"] = vec_json(task.z);
  j["gt"] = truth_json(task.truth);
  return j.dump();
}

Task parse_task(const std::string& line) {
  const Json j = Json::parse(line);
  const auto family = parse_family(j.at("family").get<std::string>());
  if (!family) throw std::invalid_argument("unknown task family");
  Task task{j.at("id").get<std::string>(), *family, json_density(j.at("prior")), json_density(j.at("likelihood")),
            json_vec(j.at("z")), json_truth(j.at("gt"))};
  if (dim(task.prior) != dim(task.likelihood))
    throw std::invalid_argument("task " + task.id + ": prior and likelihood dimensions differ");
  return task;
}

void write_ndjson(const std::filesystem::path& path, const std::vector<Task>& tasks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& t : tasks) out << serialize_task(t) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Task> read_ndjson(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Task> tasks;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      tasks.push_back(parse_task(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return tasks;
}

// ------------------------------------------------------------------ datasets

SplitCounts split_counts(Family family, int n_tasks) {
  if (n_tasks < 1) throw std::invalid_argument("split_counts: n_tasks must be positive");
  if (family == Family::gmm4d_ood) return {0, 0, n_tasks};
  const int held = n_tasks / 12;
  return {n_tasks - 2 * held, held, held};
}

std::uint64_t split_seed(std::uint64_t seed, const std::string& split) {
  if (split == "train") return seed;
  if (split == "val") return seed + 1000003;
  if (split == "test") return seed + 2000006;
  throw std::invalid_argument("unknown split '" + split + "'");
}

namespace {

Json parameter_ranges(Family family) {
  Json j;
  switch (family) {
    case Family::gauss1d:
      j["prior_mean"] = "U[-1, 1]";
      j["prior_variance"] = "U[1, 4]";
      j["likelihood_variance"] = "U[0.5, 2]";
      j["measurement"] = "truth ~ prior, z ~ N(truth, likelihood_variance)";
      break;
    case Family::gmm4d:
      j["prior_mean"] = "0";
      j["prior_variance"] = "U[1, 10] per dim";
      j["likelihood_weights"] = "equal, 3 components";
      j["likelihood_means"] = "U[-3, 3] per dim";
      j["likelihood_variances"] = "U[0.3^2, 0.7^2] per dim";
      j["z"] = "flattened likelihood component means (12)";
      break;
    case Family::gmm4d_ood:
      j["prior_weights"] = "U[0.001, 1] normalized, 3 components";
      j["prior_means"] = "N(0, 2^2) per dim";
      j["prior_variances"] = "U[1, 5] per dim";
      j["likelihood_weights"] = "equal, 3 components";
      j["likelihood_means"] = "U[-3, 3] per dim";
      j["likelihood_variances"] = "U[0.3^2, 0.7^2] per dim";
      j["z"] = "flattened likelihood component means (12)";
      break;
    case Family::tdoa:
      j["sensors"] = "S_A = (-3, 0), S_B = (3, 0)";
      j["truth"] = "N((4, 4), diag(1.5^2, 1.5^2))";
      j["noise_std"] = "U[0.4, 0.9]";
      j["prior_mean_offset"] = "N(0, diag(4^2, 5^2))";
      j["prior_variance"] = "N(5, 1) rejecting non-positive";
      j["ground_truth"] = "grid 512x512 over prior mean +- 6 sigma";
      break;
  }
  return j;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, Family family, int n_tasks, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  const SplitCounts counts = split_counts(family, n_tasks);
  const std::string fam(family_name(family));
  Json manifest;
  manifest["family"] = fam;
  manifest["counts"] = {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}};
  manifest["seed"] = seed;
  manifest["generator_version"] = kGeneratorVersion;
  Json seeds;
  for (const auto& [split, count] : {std::pair<std::string, int>{"train", counts.train},
                                     {"val", counts.val}, {"test", counts.test}}) {
    const std::uint64_t s = split_seed(seed, split);
    seeds[split] = s;
    const std::vector<Task> tasks = count > 0 ? generate(family, count, s, fam + "-" + split) : std::vector<Task>{};
    write_ndjson(dir / (split + ".ndjson"), tasks);
  }
  manifest["split_seeds"] = std::move(seeds);
  manifest["parameter_ranges"] = parameter_ranges(family);
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

}  // namespace pinflow
