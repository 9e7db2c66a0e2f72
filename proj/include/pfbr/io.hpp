#pragma once

#include "pfbr/baselines.hpp"
#include "pfbr/ensemble.hpp"
#include "pfbr/tasks.hpp"
#include "pfbr/train.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace pfbr::io {

std::uint32_t crc32(const void* data, std::size_t len);
std::uint64_t fnv1a64(std::string_view s);

// shortest round-trippable decimal form
std::string format_double(double v);

// ---- task / ensemble JSON schemas ----

nlohmann::json task_to_json(const tasks::InferenceTask& task);
tasks::InferenceTask task_from_json(const nlohmann::json& j);

void save_tasks(const std::vector<tasks::InferenceTask>& set, const std::string& path,
                std::uint64_t fingerprint, std::uint64_t seed);
std::vector<tasks::InferenceTask> load_tasks(const std::string& path);

void save_ensembles(const std::vector<ParticleEnsemble>& stages, const std::string& path,
                    std::uint64_t fingerprint, std::uint64_t seed);
std::vector<ParticleEnsemble> load_ensembles(const std::string& path);

// ---- CSV ----

struct MetricsRow {
  int stage = 0;
  std::string metric;
  std::string kernel;  // empty when not kernel-based
  double value = 0.0;
};

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows,
                       std::uint64_t fingerprint, std::uint64_t seed);

void write_history_csv(const std::string& path, const std::vector<train::HistoryRow>& rows,
                       std::uint64_t fingerprint, std::uint64_t seed);

// Rectangular numeric CSV; the label column (default: last) maps to {-1,+1},
// accepting {0,1} with a recorded warning. Parse failures name the line.
models::Dataset load_csv_dataset(const std::string& path, int label_column = -1);

// ---- run configuration ----

struct EvalConfig {
  std::vector<std::string> metrics{"mean_error", "cross_entropy", "mmd2", "integral"};
  std::vector<std::string> kernels{"rbf"};
  int truth_samples = 2000;
  double rbf_lengthscale = 0.0;  // 0 = median heuristic
  std::uint64_t eval_seed = 12345;
};

struct BaselineConfig {
  std::string algo = "smc";  // smc | sgld
  int particles = 10000;
  double ess_threshold = 0.5;
  double sgld_eps = 1e-3;
  int sgld_steps = 20000;
  double sgld_burnin_fraction = 0.5;
};

// Everything a run needs, parsed from one JSON file; unknown keys are
// rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  tasks::TaskGenConfig task_gen;
  std::string dataset_csv;  // blr: optional CSV source
  int dataset_label_column = -1;
  int pca_k = 0;  // 0 = no projection
  flownet::FlowDims flow;
  ode::IntegratorConfig integrator{ode::Method::Rk4, 20, 0.0, 1.0};
  train::TrainConfig train;
  EvalConfig eval;
  BaselineConfig baselines;

  static RunConfig defaults() { return {}; }
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
  std::uint64_t fingerprint() const;

  // flow dims completed with the model family's state/observation sizes
  flownet::FlowDims resolved_flow_dims() const;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace pfbr::io
