#pragma once

#include "pfbr/baselines.hpp"
#include "pfbr/common.hpp"
#include "pfbr/ensemble.hpp"
#include "pfbr/models.hpp"
#include "pfbr/rng.hpp"

#include <utility>
#include <vector>

namespace pfbr::tasks {

// Isotropic Gaussian kernel density over a fixed particle set, evaluated with
// log-sum-exp. The reverse-mode helpers cover every input the in-loop LDS
// surrogate differentiates: the query point, the base particles, and the
// bandwidth (including Scott's rule's dependence on the bases).
class Kde {
 public:
  Kde() = default;
  Kde(Mat particles, double bandwidth);

  static double scott_bandwidth(const Mat& particles);
  static Kde with_scott(Mat particles);

  double log_density(const Vec& x) const;
  Vec grad_log_density(const Vec& x) const;
  Mat sample(Rng& rng, int n) const;

  // Adds cot * d(log_density(x))/d{input} into the given accumulators; any
  // of them may be null.
  void vjp(const Vec& x, double cot, Vec* x_bar, Mat* bases_bar, double* sigma_bar) const;

  // Distributes a bandwidth cotangent onto the particles per Scott's rule.
  static void scott_vjp(const Mat& particles, double sigma_bar, Mat& bases_bar);

  const Mat& particles() const { return particles_; }
  double bandwidth() const { return bandwidth_; }
  int dim() const { return static_cast<int>(particles_.cols()); }

 private:
  Mat particles_;
  double bandwidth_ = 0.0;
};

double kde_log_density(const Mat& particles, double sigma, const Vec& x);
Mat kde_sample(const Mat& particles, double sigma, Rng& rng, int n);

// The prior side of a task: an analytic Gaussian or a KDE over particles.
struct PriorSpec {
  enum class Kind { Gaussian, Kde };
  Kind kind = Kind::Gaussian;
  models::GaussianPosterior gaussian;
  Kde kde;

  static PriorSpec standard_normal(int d);
  static PriorSpec from_gaussian(models::GaussianPosterior g);
  static PriorSpec from_kde(Kde k);

  int dim() const;
  double log_density(const Vec& x) const;
  Vec grad_log_density(const Vec& x) const;
  Mat sample(Rng& rng, int n) const;
};

// One sequential inference problem: prior, model, and M observation batches.
struct InferenceTask {
  PriorSpec prior;
  models::ModelSpec model;
  std::vector<std::vector<Vec>> observations;
  std::uint64_t seed = 0;  // drives in-task randomness (LDS transitions)

  int stages() const { return static_cast<int>(observations.size()); }
  void validate() const;
};

// Splits at stage m* (1 <= m* < M): the head keeps the original prior and
// o_{1..m*}; the tail starts from a Scott-bandwidth KDE over the stage-m*
// particles and carries o_{m*+1..M}.
std::pair<InferenceTask, InferenceTask> segment_sequence(const InferenceTask& task,
                                                         const std::vector<ParticleEnsemble>& ensembles,
                                                         int m_star);

std::vector<std::vector<Vec>> make_batches(const std::vector<Vec>& observations, int batch_size);

// One-pass SMC over a task (transitions included for hidden-Markov models).
// Returns the weighted ensemble after each stage's update.
std::vector<baselines::WeightedEnsemble> smc_inference(const InferenceTask& task, int n,
                                                       double ess_threshold, Rng& rng);

struct TaskGenConfig {
  std::string family = "gaussian";  // gaussian | gmm | lds | blr
  int count = 10;
  int stages = 10;  // M
  int batch = 1;    // L
  int d = 1;
  double obs_scale = 3.0;         // gaussian likelihood covariance scale
  double kde_prior_fraction = 0.3;
  int prior_progress_max = 8;     // max synthetic Bayes steps folded into the prior
  double progress_truth_std = 1.5;
  // fraction of tasks whose observation truth is drawn from the progressed
  // prior itself; the rest draw it from the base prior, so the operator also
  // sees updates where the data surprises the current posterior
  double truth_from_prior_fraction = 0.5;
  // additional spread applied to each task prior's location, so training
  // covers updates whose incoming data disagrees with the current belief
  double prior_mean_jitter = 1.2;
  int kde_prior_particles = 256;
  double lds_noise = 0.1;
  double rotation_range = 15.0 * M_PI / 180.0;  // blr feature rotation, radians
  models::Dataset dataset;                      // optional for blr
  int blr_synth_count = 256;                    // synthetic dataset size when none given

  void validate() const;
};

// Deterministic given the rng seed. Priors are diversified by progressing a
// synthetic inference forward a random number of steps and using the
// resulting posterior (analytic when conjugate, otherwise a KDE over an SMC
// approximation) as the task prior.
std::vector<InferenceTask> generate_training_set(const TaskGenConfig& cfg, Rng& rng);

}  // namespace pfbr::tasks
