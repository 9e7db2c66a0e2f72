#include "pfbr/cli.hpp"

#include "pfbr/metrics.hpp"
#include "pfbr/train.hpp"

#include <cmath>
#include <ostream>

namespace pfbr::cli {

namespace {

using io::RunConfig;

void cross_check_dims(const flownet::FlowDims& dims, const tasks::InferenceTask& task) {
  require(dims.d == task.model.d && dims.obs_dim == task.model.obs_dim, ErrorKind::ShapeMismatch,
          "flow dims (d=" + std::to_string(dims.d) + ", obs=" + std::to_string(dims.obs_dim) +
              ") do not match the task model (d=" + std::to_string(task.model.d) +
              ", obs=" + std::to_string(task.model.obs_dim) + ")");
}

flownet::FlowDims dims_for_tasks(const RunConfig& cfg,
                                 const std::vector<tasks::InferenceTask>& set) {
  require(!set.empty(), ErrorKind::ParseError, "task file is empty");
  flownet::FlowDims dims = cfg.flow;
  dims.d = set.front().model.d;
  dims.obs_dim = set.front().model.obs_dim;
  for (const auto& t : set) cross_check_dims(dims, t);
  return dims;
}

// Exact per-stage posteriors where a closed form exists: conjugate Gaussian
// updates or the Kalman filter, both honoring the task's own Gaussian prior.
std::vector<models::GaussianPosterior> resolve_oracle(const tasks::InferenceTask& task) {
  require(task.prior.kind == tasks::PriorSpec::Kind::Gaussian, ErrorKind::NoOracle,
          "no exact posterior for a KDE prior; pass reference samples instead");
  if (task.model.name == "gaussian") {
    // recover the likelihood scale from the model
    Vec zero = Vec::Zero(task.model.d), one = Vec::Zero(task.model.d);
    one[0] = 1.0;
    const double scale = -0.5 / (task.model.log_lik(one, zero) - task.model.log_lik(zero, zero));
    std::vector<models::GaussianPosterior> out;
    std::vector<Vec> seen;
    for (const auto& batch : task.observations) {
      seen.insert(seen.end(), batch.begin(), batch.end());
      out.push_back(models::conjugate_update(task.prior.gaussian, seen, scale));
    }
    return out;
  }
  if (task.model.name == "lds") {
    const auto& t = *task.model.transition;
    return models::kalman_filter(t.a, t.b, t.sigma1, t.sigma2, task.prior.gaussian,
                                 task.observations);
  }
  fail(ErrorKind::NoOracle,
       "model '" + task.model.name + "' has no exact posterior; pass reference samples instead");
}

std::vector<io::MetricsRow> evaluate_stages(const RunConfig& cfg,
                                            const std::vector<ParticleEnsemble>& stages,
                                            const tasks::InferenceTask& task,
                                            const std::vector<ParticleEnsemble>* reference) {
  const int m_total = static_cast<int>(stages.size());
  std::vector<models::GaussianPosterior> oracle;
  bool have_oracle = false;
  bool need_truth = false;
  for (const auto& name : cfg.eval.metrics)
    if (name == "mean_error" || name == "cross_entropy" || name == "mmd2" || name == "integral")
      need_truth = true;
  if (need_truth && !reference) {
    oracle = resolve_oracle(task);
    require(static_cast<int>(oracle.size()) == m_total, ErrorKind::ShapeMismatch,
            "oracle stage count mismatch");
    have_oracle = true;
  }
  if (reference)
    require(static_cast<int>(reference->size()) == m_total, ErrorKind::ShapeMismatch,
            "reference stage count does not match the ensembles");

  Rng eval_rng(cfg.eval.eval_seed);
  const int d = task.model.d;
  // fixed quadratic/bilinear probes for the integral metric
  Mat a = eval_rng.normal_mat(d, d) / std::sqrt(static_cast<double>(d));
  Mat b = eval_rng.normal_mat(d, d) / std::sqrt(static_cast<double>(d));
  Vec av = eval_rng.normal_vec(d);
  Vec bv = eval_rng.normal_vec(d);

  std::vector<io::MetricsRow> rows;
  for (int m = 0; m < m_total; ++m) {
    Mat truth_samples;
    Vec truth_mean;
    if (reference) {
      truth_samples = (*reference)[static_cast<std::size_t>(m)].positions;
      truth_mean = truth_samples.colwise().mean();
    } else if (have_oracle) {
      truth_samples = oracle[static_cast<std::size_t>(m)].sample(eval_rng, cfg.eval.truth_samples);
      truth_mean = oracle[static_cast<std::size_t>(m)].mean;
    }
    const Mat& particles = stages[static_cast<std::size_t>(m)].positions;
    const int stage = stages[static_cast<std::size_t>(m)].stage;

    for (const auto& name : cfg.eval.metrics) {
      if (name == "mean_error") {
        Vec mean = particles.colwise().mean();
        rows.push_back({stage, "mean_error", "", (mean - truth_mean).norm()});
      } else if (name == "cross_entropy") {
        rows.push_back({stage, "cross_entropy", "", metrics::cross_entropy(truth_samples, particles)});
      } else if (name == "mmd2") {
        for (const auto& kname : cfg.eval.kernels) {
          metrics::KernelSpec kernel;
          kernel.kind = metrics::kernel_kind_from_string(kname);
          if (kernel.kind == metrics::KernelSpec::Kind::Rbf ||
              kernel.kind == metrics::KernelSpec::Kind::Laplacian) {
            kernel.lengthscale = cfg.eval.rbf_lengthscale > 0
                                     ? cfg.eval.rbf_lengthscale
                                     : metrics::median_heuristic(truth_samples, particles);
          }
          rows.push_back({stage, "mmd2", kname, metrics::mmd2(truth_samples, particles, kernel)});
        }
      } else if (name == "integral") {
        require(have_oracle, ErrorKind::NoOracle,
                "the integral metric needs a closed-form Gaussian truth");
        Vec disc = metrics::integral_discrepancy(particles, oracle[static_cast<std::size_t>(m)], a,
                                                 b, av, bv);
        rows.push_back({stage, "integral_mean", "", disc[0]});
        rows.push_back({stage, "integral_quad", "", disc[1]});
        rows.push_back({stage, "integral_bilinear", "", disc[2]});
      } else {
        fail(ErrorKind::ConfigError, "unknown metric '" + name + "'");
      }
    }
  }
  return rows;
}

const tasks::InferenceTask& pick_task(const std::vector<tasks::InferenceTask>& set, int index) {
  require(index >= 0 && index < static_cast<int>(set.size()), ErrorKind::ConfigError,
          "task index " + std::to_string(index) + " outside the file's range");
  return set[static_cast<std::size_t>(index)];
}

}  // namespace

void cmd_dump_defaults(std::ostream& out) { out << RunConfig::defaults().to_json().dump(1) << "\n"; }

void cmd_generate_tasks(const RunConfig& cfg, const std::string& out_path) {
  tasks::TaskGenConfig gen = cfg.task_gen;
  if (gen.family == "blr" && !cfg.dataset_csv.empty()) {
    gen.dataset = io::load_csv_dataset(cfg.dataset_csv, cfg.dataset_label_column);
    if (cfg.pca_k > 0) gen.dataset = models::pca_project(gen.dataset, cfg.pca_k);
  }
  Rng rng(cfg.seed);
  auto set = tasks::generate_training_set(gen, rng);
  io::save_tasks(set, out_path, cfg.fingerprint(), cfg.seed);
}

void cmd_train(const RunConfig& cfg, const std::string& tasks_path, const std::string& ckpt_path,
               const std::string& history_path) {
  auto set = io::load_tasks(tasks_path);
  require(set.size() >= 2, ErrorKind::ConfigError,
          "need at least two tasks to split train/validation");
  // hold out every fifth task (at least one) for validation
  std::vector<tasks::InferenceTask> train_set, vali_set;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (i % 5 == 4 || (vali_set.empty() && i + 1 == set.size()))
      vali_set.push_back(set[i]);
    else
      train_set.push_back(set[i]);
  }

  flownet::FlowDims dims = dims_for_tasks(cfg, set);
  op::PfbrOperator oper(dims, cfg.integrator);
  Rng init_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
  flownet::FlowParams init = oper.net().init_params(init_rng);

  train::TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;
  train::TrainResult result = train::meta_train(oper, init, train_set, vali_set, tcfg,
                                                cfg.fingerprint());

  result.best.dims = dims;
  train::save_checkpoint(result.best, ckpt_path);
  io::write_history_csv(history_path, result.history, cfg.fingerprint(), cfg.seed);
  require(!result.diverged, ErrorKind::NonFinite,
          result.divergence_note + " (last finite checkpoint written)");
}

void cmd_infer(const RunConfig& cfg, const std::string& ckpt_path, const std::string& tasks_path,
               int task_index, const std::string& out_path) {
  train::Checkpoint ckpt = train::load_checkpoint(ckpt_path);
  auto set = io::load_tasks(tasks_path);
  const tasks::InferenceTask& task = pick_task(set, task_index);
  cross_check_dims(ckpt.dims, task);

  op::PfbrOperator oper(ckpt.dims, cfg.integrator);
  Rng rng(cfg.seed);
  ParticleEnsemble prior = oper.draw_prior(task, cfg.train.particles, rng);
  auto stages = oper.sequential_inference(task, prior, ckpt.params);
  io::save_ensembles(stages, out_path, cfg.fingerprint(), cfg.seed);
}

void cmd_eval(const RunConfig& cfg, const std::string& ensembles_path,
              const std::string& tasks_path, int task_index, const std::string& reference_path,
              const std::string& out_csv) {
  auto stages = io::load_ensembles(ensembles_path);
  auto set = io::load_tasks(tasks_path);
  const tasks::InferenceTask& task = pick_task(set, task_index);
  std::vector<ParticleEnsemble> reference;
  if (!reference_path.empty()) reference = io::load_ensembles(reference_path);
  auto rows = evaluate_stages(cfg, stages, task, reference_path.empty() ? nullptr : &reference);
  io::write_metrics_csv(out_csv, rows, cfg.fingerprint(), cfg.seed);
}

void cmd_baselines(const RunConfig& cfg, const std::string& tasks_path, int task_index,
                   const std::string& algo, const std::string& out_csv,
                   const std::string& out_ensembles) {
  auto set = io::load_tasks(tasks_path);
  const tasks::InferenceTask& task = pick_task(set, task_index);
  Rng rng(cfg.seed);

  std::vector<ParticleEnsemble> stages;
  if (algo == "smc") {
    auto weighted = tasks::smc_inference(task, cfg.baselines.particles,
                                         cfg.baselines.ess_threshold, rng);
    for (std::size_t m = 0; m < weighted.size(); ++m) {
      // equal-weight export; the filter itself is untouched
      auto equal = baselines::systematic_resample(weighted[m], rng);
      ParticleEnsemble e;
      e.positions = equal.positions;
      e.logdens = Vec::Zero(equal.count());
      e.stage = static_cast<int>(m) + 1;
      stages.push_back(std::move(e));
    }
  } else if (algo == "sgld") {
    require(!task.model.hidden_markov(), ErrorKind::ConfigError,
            "sgld baseline supports static models only");
    require(cfg.baselines.sgld_eps > 0, ErrorKind::ConfigError, "sgld step size must be positive");
    std::vector<Vec> seen;
    for (std::size_t m = 0; m < task.observations.size(); ++m) {
      seen.insert(seen.end(), task.observations[m].begin(), task.observations[m].end());
      Vec x0 = Vec::Zero(task.model.d);
      Mat traj = baselines::sgld_run(task.model, seen, x0, cfg.baselines.sgld_eps,
                                     cfg.baselines.sgld_steps, rng);
      const int keep_from = static_cast<int>(cfg.baselines.sgld_burnin_fraction * traj.rows());
      const int avail = static_cast<int>(traj.rows()) - keep_from;
      const int want = std::min(avail, cfg.baselines.particles);
      ParticleEnsemble e;
      e.positions.resize(want, task.model.d);
      for (int i = 0; i < want; ++i) {
        // evenly thin the kept tail
        const int row = keep_from + static_cast<int>((static_cast<long long>(i) * avail) / want);
        e.positions.row(i) = traj.row(row);
      }
      e.logdens = Vec::Zero(want);
      e.stage = static_cast<int>(m) + 1;
      stages.push_back(std::move(e));
    }
  } else {
    fail(ErrorKind::ConfigError, "unknown baseline algorithm '" + algo + "'");
  }

  if (!out_ensembles.empty()) io::save_ensembles(stages, out_ensembles, cfg.fingerprint(), cfg.seed);
  auto rows = evaluate_stages(cfg, stages, task, nullptr);
  io::write_metrics_csv(out_csv, rows, cfg.fingerprint(), cfg.seed);
}

}  // namespace pfbr::cli
