#pragma once

#include "pfbr/pfbr_op.hpp"

#include <limits>
#include <string>
#include <vector>

namespace pfbr::train {

struct AdamState {
  Vec m;
  Vec v;
  std::int64_t step = 0;
};

// Standard bias-corrected Adam update.
void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state, double lr,
               double beta1, double beta2, double eps);

struct TrainConfig {
  int iterations = 200;
  double learning_rate = 1e-3;
  std::string optimizer = "adam";  // adam | sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int validation_interval = 10;  // k of Algorithm 1
  std::uint64_t seed = 0;
  std::string gradient_method = "backprop";  // backprop | adjoint
  int particles = 128;                       // N per iteration
  double clip_norm = 10.0;                   // global-norm clip; 0 disables

  void validate() const;
};

struct HistoryRow {
  int iteration = 0;  // 1-based
  double train_loss = 0.0;
  double vali_loss = 0.0;
  bool has_vali = false;
};

struct Checkpoint {
  flownet::FlowDims dims;
  ParamVector params;
  AdamState opt;
  std::int64_t iteration = 0;
  double validation_loss = std::numeric_limits<double>::infinity();
  std::uint64_t config_fingerprint = 0;
  std::string rng_state;
};

struct TrainResult {
  Checkpoint best;
  std::vector<HistoryRow> history;
  bool diverged = false;
  std::string divergence_note;
};

// Algorithm 1: sample a task, draw prior particles, take one optimizer step,
// validate every k iterations; returns the parameters with the lowest
// validation loss. A non-finite loss or gradient aborts with the last finite
// state preserved in `best`.
TrainResult meta_train(const op::PfbrOperator& oper, const flownet::FlowParams& init,
                       const std::vector<tasks::InferenceTask>& train_tasks,
                       const std::vector<tasks::InferenceTask>& vali_tasks, const TrainConfig& cfg,
                       std::uint64_t config_fingerprint = 0);

// Binary checkpoint: "PFBR" magic, u32 format version, dims header, rng state,
// named segment table, little-endian f64 payload (params, then Adam moments),
// trailing CRC32.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pfbr::train
