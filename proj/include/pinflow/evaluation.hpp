#pragma once

#include "pinflow/baselines.hpp"
#include "pinflow/homotopy.hpp"
#include "pinflow/metrics.hpp"
#include "pinflow/neuralflow.hpp"
#include "pinflow/task.hpp"
#include "pinflow/transporter.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pinflow {

enum class Method { pinpf, svgd, annealed_mala, oracle };

std::string_view method_name(Method method);
std::optional<Method> parse_method(std::string_view name);
/// Comma-separated list; throws std::invalid_argument on unknown names.
std::vector<Method> parse_methods(std::string_view list);

inline constexpr int kReportSchemaVersion = 1;

struct ReportRow {
  std::string task_id;
  Method method = Method::pinpf;
  double energy_distance = 0.0;
  double swd = 0.0;
  std::optional<int> nfe;  // flows only
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string error;  // empty on success
};

struct EvalConfig {
  std::vector<Method> methods{Method::pinpf, Method::svgd, Method::annealed_mala};
  const FlowNetwork* net = nullptr;  // required for pinpf
  std::optional<FeatureLayout> layout;
  std::optional<TransportConfig> transport;  // default: inference_preset(family)
  SvgdConfig svgd;
  AnnealConfig anneal;
  MetricConfig metrics;
  std::uint64_t seed = 0;
  bool zero_wall_time = false;  // byte-stable reports
  std::optional<std::filesystem::path> particle_dir;
};

/// Stable hash of everything that affects report values.
std::string config_hash(const EvalConfig& config);

struct EvalResult {
  std::vector<ReportRow> rows;  // task-major, methods in config order
  Warnings warnings;
};

/// Runs every method on every task. A failing method yields a row with the
/// error tag and the run continues; a task without ground truth throws.
EvalResult evaluate(const std::vector<Task>& tasks, const EvalConfig& config);

struct SummaryRow {
  Method method = Method::pinpf;
  double energy_distance = 0.0;
  double swd = 0.0;
  double wall_ms = 0.0;
  int n_ok = 0;
  int n_failed = 0;
};

/// Per-method means over successful rows.
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);

void write_report_csv(const std::filesystem::path& path, const std::vector<ReportRow>& rows, int swd_order);
void write_summary_csv(const std::filesystem::path& path, const std::vector<SummaryRow>& summary);

}  // namespace pinflow
