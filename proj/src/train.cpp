#include "pfbr/train.hpp"

#include "pfbr/io.hpp"

#include <cmath>
#include <cstring>

namespace pfbr::train {

void TrainConfig::validate() const {
  require(iterations >= 1, ErrorKind::ConfigError, "iterations must be >= 1");
  require(validation_interval >= 1, ErrorKind::ConfigError, "validation interval must be >= 1");
  require(learning_rate > 0, ErrorKind::ConfigError, "learning rate must be positive");
  require(particles >= 1, ErrorKind::ConfigError, "particle count must be >= 1");
  require(optimizer == "adam" || optimizer == "sgd", ErrorKind::ConfigError,
          "optimizer must be adam or sgd");
  require(gradient_method == "backprop" || gradient_method == "adjoint", ErrorKind::ConfigError,
          "gradient method must be backprop or adjoint");
  require(clip_norm >= 0, ErrorKind::ConfigError, "clip norm must be >= 0");
}

void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  const auto n = params.values().size();
  require(grad.values().size() == n, ErrorKind::ShapeMismatch, "gradient/parameter size mismatch");
  if (state.m.size() != n) {
    state.m = Vec::Zero(n);
    state.v = Vec::Zero(n);
    state.step = 0;
  }
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grad.values();
  state.v = beta2 * state.v + (1.0 - beta2) * grad.values().cwiseAbs2();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  params.values().array() -=
      lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + eps);
}

TrainResult meta_train(const op::PfbrOperator& oper, const flownet::FlowParams& init,
                       const std::vector<tasks::InferenceTask>& train_tasks,
                       const std::vector<tasks::InferenceTask>& vali_tasks, const TrainConfig& cfg,
                       std::uint64_t config_fingerprint) {
  cfg.validate();
  require(!train_tasks.empty(), ErrorKind::ConfigError, "no training tasks");
  require(!vali_tasks.empty(), ErrorKind::ConfigError, "no validation tasks");

  Rng rng(cfg.seed);
  ParamVector params = init.values;
  AdamState opt;

  // validation particles are frozen once so scores are comparable across
  // validation points
  std::vector<ParticleEnsemble> vali_priors;
  vali_priors.reserve(vali_tasks.size());
  {
    Rng vali_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    for (const auto& task : vali_tasks)
      vali_priors.push_back(oper.draw_prior(task, cfg.particles, vali_rng));
  }

  auto validate_now = [&](const ParamVector& p) {
    double acc = 0.0;
    for (std::size_t v = 0; v < vali_tasks.size(); ++v)
      acc += oper.task_loss(vali_tasks[v], vali_priors[v], p).loss;
    return acc / static_cast<double>(vali_tasks.size());
  };

  TrainResult result;
  result.best.dims = init.dims;
  result.best.params = params;
  result.best.config_fingerprint = config_fingerprint;
  result.history.reserve(cfg.iterations);

  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto pick = rng.below(train_tasks.size());
    const tasks::InferenceTask& task = train_tasks[static_cast<std::size_t>(pick)];
    ParticleEnsemble prior = oper.draw_prior(task, cfg.particles, rng);

    op::GradResult g;
    try {
      g = cfg.gradient_method == "adjoint" ? oper.grad_adjoint(task, prior, params)
                                           : oper.grad_backprop(task, prior, params);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NonFinite) throw;
      result.diverged = true;
      result.divergence_note =
          "gradient diverged at iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
    if (!std::isfinite(g.loss)) {
      result.diverged = true;
      result.divergence_note = "loss became non-finite at iteration " + std::to_string(it);
      break;
    }

    if (cfg.clip_norm > 0) {
      const double norm = g.grad.values().norm();
      if (norm > cfg.clip_norm) g.grad.values() *= cfg.clip_norm / norm;
    }
    if (cfg.optimizer == "adam") {
      adam_step(params, g.grad, opt, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    } else {
      params.values() -= cfg.learning_rate * g.grad.values();
    }

    HistoryRow row;
    row.iteration = it;
    row.train_loss = g.loss;
    if (it % cfg.validation_interval == 0 || it == cfg.iterations) {
      row.vali_loss = validate_now(params);
      row.has_vali = true;
      if (row.vali_loss < result.best.validation_loss) {
        result.best.params = params;
        result.best.opt = opt;
        result.best.iteration = it;
        result.best.validation_loss = row.vali_loss;
        result.best.rng_state = rng.state();
      }
    }
    result.history.push_back(row);
  }

  if (result.diverged && !std::isfinite(result.best.validation_loss)) {
    // no finite validation point was ever reached; keep the initial weights
    result.best.params = init.values;
  }
  return result;
}

namespace {

struct ByteWriter {
  std::string buf;

  void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void vec(const Vec& v) { raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size())); }
};

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void raw(void* p, std::size_t n) {
    require(pos + n <= buf.size(), ErrorKind::FormatVersionMismatch,
            "checkpoint truncated");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    require(pos + n <= buf.size(), ErrorKind::FormatVersionMismatch, "checkpoint truncated");
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
  Vec vec(std::size_t n) {
    Vec v(static_cast<Eigen::Index>(n));
    raw(v.data(), sizeof(double) * n);
    return v;
  }
};

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  ByteWriter w;
  w.raw("PFBR", 4);
  w.u32(kCheckpointVersion);
  const flownet::FlowDims& d = ckpt.dims;
  for (int v : {d.d, d.obs_dim, d.e_x, d.e_o, d.phi_hidden, d.g_hidden, d.gated_hidden, d.k,
                d.obs_input == flownet::ObsInput::Raw ? 0 : 1})
    w.u32(static_cast<std::uint32_t>(v));
  w.i64(ckpt.iteration);
  w.f64(ckpt.validation_loss);
  w.u64(ckpt.config_fingerprint);
  w.str(ckpt.rng_state);

  const LayoutPtr& layout = ckpt.params.layout();
  require(layout != nullptr, ErrorKind::ShapeMismatch, "checkpoint has no parameter layout");
  w.u32(static_cast<std::uint32_t>(layout->count()));
  for (int s = 0; s < layout->count(); ++s) {
    const Segment& seg = layout->segment(s);
    w.str(seg.name);
    w.u32(static_cast<std::uint32_t>(seg.rows));
    w.u32(static_cast<std::uint32_t>(seg.cols));
  }
  w.vec(ckpt.params.values());
  const auto n = ckpt.params.values().size();
  Vec m = ckpt.opt.m.size() == n ? ckpt.opt.m : Vec(Vec::Zero(n));
  Vec v = ckpt.opt.v.size() == n ? ckpt.opt.v : Vec(Vec::Zero(n));
  w.vec(m);
  w.vec(v);
  w.i64(ckpt.opt.step);

  w.u32(io::crc32(w.buf.data(), w.buf.size()));
  io::write_file(path, w.buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = io::read_file(path);
  require(buf.size() >= 12, ErrorKind::FormatVersionMismatch, "checkpoint too short");
  require(std::memcmp(buf.data(), "PFBR", 4) == 0, ErrorKind::FormatVersionMismatch,
          "bad magic bytes");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  require(io::crc32(buf.data(), buf.size() - 4) == stored_crc, ErrorKind::FormatVersionMismatch,
          "checkpoint CRC mismatch");

  ByteReader r{buf, 4};
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorKind::FormatVersionMismatch,
          "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  flownet::FlowDims& d = ckpt.dims;
  d.d = static_cast<int>(r.u32());
  d.obs_dim = static_cast<int>(r.u32());
  d.e_x = static_cast<int>(r.u32());
  d.e_o = static_cast<int>(r.u32());
  d.phi_hidden = static_cast<int>(r.u32());
  d.g_hidden = static_cast<int>(r.u32());
  d.gated_hidden = static_cast<int>(r.u32());
  d.k = static_cast<int>(r.u32());
  d.obs_input = r.u32() == 0 ? flownet::ObsInput::Raw : flownet::ObsInput::GradLogLik;
  ckpt.iteration = r.i64();
  ckpt.validation_loss = r.f64();
  ckpt.config_fingerprint = r.u64();
  ckpt.rng_state = r.str();

  LayoutPtr layout = flownet::FlowNet::make_layout(d);
  const std::uint32_t seg_count = r.u32();
  require(static_cast<int>(seg_count) == layout->count(), ErrorKind::ShapeMismatch,
          "segment count does not match the dims header");
  for (int s = 0; s < layout->count(); ++s) {
    const Segment& expect = layout->segment(s);
    const std::string name = r.str();
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    require(name == expect.name && rows == expect.rows && cols == expect.cols,
            ErrorKind::ShapeMismatch,
            "segment '" + name + "' does not match the expected shape of '" + expect.name + "'");
  }
  const std::size_t total = layout->total_size();
  ckpt.params = ParamVector(layout, r.vec(total));
  ckpt.opt.m = r.vec(total);
  ckpt.opt.v = r.vec(total);
  ckpt.opt.step = r.i64();
  require(r.pos == buf.size() - 4, ErrorKind::FormatVersionMismatch,
          "trailing bytes in checkpoint");
  return ckpt;
}

}  // namespace pfbr::train
