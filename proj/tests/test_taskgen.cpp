#include "doctest.h"

#include "pinflow/taskgen.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace pinflow;
namespace fs = std::filesystem;

namespace {

// Kolmogorov distance between a sample and U[lo, hi].
double ks_uniform(std::vector<double> v, double lo, double hi) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = (v[i] - lo) / (hi - lo);
    worst = std::max({worst, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
  }
  return worst;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pinflow_test_taskgen" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("split counts") {
  const SplitCounts s = split_counts(Family::gmm4d, 1200);
  CHECK(s.train == 1000);
  CHECK(s.val == 100);
  CHECK(s.test == 100);
  const SplitCounts t = split_counts(Family::tdoa, 1200);
  CHECK(t.train == 1000);
  CHECK(t.val == 100);
  const SplitCounts o = split_counts(Family::gmm4d_ood, 100);
  CHECK(o.train == 0);
  CHECK(o.val == 0);
  CHECK(o.test == 100);
  CHECK_THROWS_AS(split_counts(Family::tdoa, 0), std::invalid_argument);
  CHECK(split_seed(5, "train") != split_seed(5, "val"));
  CHECK_THROWS_AS(split_seed(5, "dev"), std::invalid_argument);
}

TEST_CASE("gmm4d tasks") {
  const std::vector<Task> tasks = gen_gmm4d(50, 1);
  std::set<std::string> ids;
  for (const Task& t : tasks) {
    ids.insert(t.id);
    CHECK(t.state_dim() == 4);
    CHECK(t.z.size() == 12);
    const auto& prior = std::get<DiagGaussian>(t.prior);
    CHECK(prior.mean().isZero(0.0));
    CHECK(prior.variances().minCoeff() >= 1.0);
    CHECK(prior.variances().maxCoeff() <= 10.0);
    const auto& lik = std::get<GaussianMixture>(t.likelihood);
    REQUIRE(lik.components().size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(lik.weights()[k] == doctest::Approx(1.0 / 3.0));
      CHECK(lik.components()[k].mean().cwiseAbs().maxCoeff() <= 3.0);
      CHECK(lik.components()[k].variances().minCoeff() >= 0.09);
      CHECK(lik.components()[k].variances().maxCoeff() <= 0.49);
      CHECK(t.z.segment(4 * static_cast<Eigen::Index>(k), 4) == lik.components()[k].mean());
    }
    CHECK(std::holds_alternative<GaussianMixture>(t.truth));
  }
  CHECK(ids.size() == tasks.size());
}

TEST_CASE("gmm4d_ood tasks") {
  for (const Task& t : gen_gmm4d_ood(50, 2)) {
    const auto& prior = std::get<GaussianMixture>(t.prior);
    double total = 0.0;
    for (double w : prior.weights()) total += w;
    CHECK(std::abs(total - 1.0) < 1e-12);
    for (const DiagGaussian& c : prior.components()) {
      CHECK(c.variances().minCoeff() >= 1.0);
      CHECK(c.variances().maxCoeff() <= 5.0);
    }
    CHECK(std::get<GaussianMixture>(t.truth).components().size() == 9);
  }
}

TEST_CASE("tdoa tasks") {
  for (const Task& t : gen_tdoa(200, 3)) {
    const auto& lik = std::get<TdoaLikelihood>(t.likelihood);
    CHECK(lik.sensor_a() == kSensorA);
    CHECK(lik.sensor_b() == kSensorB);
    CHECK(lik.noise_std() >= 0.4);
    CHECK(lik.noise_std() <= 0.9);
    CHECK(t.z.size() == 1);
    CHECK(t.z[0] == lik.measurement());
    CHECK(std::get<DiagGaussian>(t.prior).variances().minCoeff() > 0.0);
    CHECK(std::holds_alternative<GridSpec>(t.truth));
  }
}

TEST_CASE("parameter distributions match their declared ranges") {
  const int n = 100000;
  std::vector<double> sigma, prior_var, ood_var;
  for (const Task& t : gen_tdoa(n, 4)) sigma.push_back(std::get<TdoaLikelihood>(t.likelihood).noise_std());
  for (const Task& t : gen_gmm4d(n, 5)) prior_var.push_back(std::get<DiagGaussian>(t.prior).variances()[0]);
  for (const Task& t : gen_gmm4d_ood(n, 6))
    ood_var.push_back(std::get<GaussianMixture>(t.prior).components()[0].variances()[2]);
  CHECK(ks_uniform(sigma, 0.4, 0.9) < 0.02);
  CHECK(ks_uniform(prior_var, 1.0, 10.0) < 0.02);
  CHECK(ks_uniform(ood_var, 1.0, 5.0) < 0.02);
}

TEST_CASE("serialization round trip") {
  for (Family f : {Family::gauss1d, Family::gmm4d, Family::gmm4d_ood, Family::tdoa}) {
    for (const Task& t : generate(f, 5, 7, std::string(family_name(f)))) {
      const std::string line = serialize_task(t);
      CHECK(line.find('\n') == std::string::npos);
      const Task back = parse_task(line);
      CHECK(serialize_task(back) == line);
      CHECK(back.id == t.id);
      CHECK(back.family == t.family);
      CHECK(back.z == t.z);
    }
  }
  CHECK_THROWS(parse_task("{}"));
  CHECK_THROWS(parse_task("not json"));
  CHECK_THROWS(parse_task(R"({"id":"x","family":"cubes"})"));
}

TEST_CASE("datasets are deterministic and match their manifest") {
  const fs::path a = scratch("a");
  const fs::path b = scratch("b");
  write_dataset(a, Family::tdoa, 36, 11);
  write_dataset(b, Family::tdoa, 36, 11);
  for (const char* f : {"train.ndjson", "val.ndjson", "test.ndjson", "manifest.json"})
    CHECK(slurp(a / f) == slurp(b / f));

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["family"] == "tdoa");
  CHECK(manifest["seed"] == 11);
  CHECK(manifest["generator_version"] == kGeneratorVersion);
  CHECK(manifest.contains("parameter_ranges"));
  for (const char* split : {"train", "val", "test"}) {
    const std::vector<Task> tasks = read_ndjson(a / (std::string(split) + ".ndjson"));
    CHECK(static_cast<int>(tasks.size()) == manifest["counts"][split].get<int>());
  }
  CHECK(read_ndjson(a / "train.ndjson").size() == 30);

  const fs::path c = scratch("c");
  write_dataset(c, Family::tdoa, 36, 12);
  CHECK(slurp(a / "train.ndjson") != slurp(c / "train.ndjson"));

  const fs::path ood = scratch("ood");
  write_dataset(ood, Family::gmm4d_ood, 10, 1);
  CHECK(read_ndjson(ood / "train.ndjson").empty());
  CHECK(read_ndjson(ood / "test.ndjson").size() == 10);
}

TEST_CASE("generation is deterministic per seed") {
  const auto a = gen_gmm4d(3, 9);
  const auto b = gen_gmm4d(3, 9);
  const auto c = gen_gmm4d(3, 10);
  for (int i = 0; i < 3; ++i) {
    CHECK(serialize_task(a[i]) == serialize_task(b[i]));
    CHECK(serialize_task(a[i]) != serialize_task(c[i]));
  }
  CHECK(task_seed("gmm4d-test-00001", 0) == task_seed("gmm4d-test-00001", 0));
  CHECK(task_seed("gmm4d-test-00001", 0) != task_seed("gmm4d-test-00002", 0));
  CHECK_THROWS_AS(gen_tdoa(0, 1), std::invalid_argument);
}
