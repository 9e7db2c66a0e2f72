#include "pfbr/pfbr_op.hpp"

#include <cmath>

namespace pfbr::op {

namespace {

using flownet::FlowNet;
using flownet::ObsInput;
using tasks::InferenceTask;
using tasks::Kde;

// One stage's target log p(x, O_m): log prior plus the likelihood prefix sum
// for static models, or the KDE surrogate plus the current batch for
// hidden-Markov stages.
struct StageTargetEval {
  const InferenceTask* task = nullptr;
  int stage = 0;  // 0-based
  const Kde* kde = nullptr;

  double value_with_grad(const Vec& x, Vec& grad) const {
    double v;
    if (kde) {
      v = kde->log_density(x);
      grad = kde->grad_log_density(x);
      for (const Vec& o : task->observations[stage]) {
        v += task->model.log_lik(o, x);
        grad += task->model.grad_x_log_lik(o, x);
      }
    } else {
      v = task->prior.log_density(x);
      grad = task->prior.grad_log_density(x);
      for (int m = 0; m <= stage; ++m) {
        for (const Vec& o : task->observations[m]) {
          v += task->model.log_lik(o, x);
          grad += task->model.grad_x_log_lik(o, x);
        }
      }
    }
    return v;
  }
};

// Evaluates the augmented field G(x, t) = (f, div f) for a frozen context.
struct AugEval {
  const FlowNet& net;
  const ParamVector& params;
  Vec ctx;
  mutable ad::Workspace ws;
  mutable Vec in;

  void operator()(const Vec& x, double t, Vec& fx, double& div) const {
    net.pack_field_input(ctx, x, t, in);
    Vec out = net.augmented_graph().eval(in, params, ws);
    const int d = net.dims().d;
    fx = out.head(d);
    div = out[d];
  }
};

struct StageTrace {
  Vec ctx;
  Mat flow_start;      // N x d at the stage's t = 0 (post-transition for LDS)
  Vec start_logq;
  Kde kde;             // LDS only
  bool has_kde = false;
  std::vector<Mat> steps;  // positions at each step start, when kept
  Mat end_positions;
  Vec end_logq;
  Vec target_vals;   // N
  Mat target_grads;  // N x d
};

struct ForwardTrace {
  std::vector<StageTrace> stages;
  double loss = 0.0;
  std::vector<ParticleEnsemble> ensembles;
};

void advance_particle(const AugEval& aug, const ode::IntegratorConfig& cfg, Vec& x, double& logq,
                      int particle, int stage) {
  const double h = cfg.step_size();
  const int d = static_cast<int>(x.size());
  Vec k1(d), k2(d), k3(d), k4(d), tmp(d);
  double q1 = 0, q2 = 0, q3 = 0, q4 = 0;
  for (int s = 0; s < cfg.steps; ++s) {
    const double t = cfg.t0 + s * h;
    switch (cfg.method) {
      case ode::Method::Euler:
        aug(x, t, k1, q1);
        x += h * k1;
        logq -= h * q1;
        break;
      case ode::Method::Midpoint:
        aug(x, t, k1, q1);
        tmp = x + (0.5 * h) * k1;
        aug(tmp, t + 0.5 * h, k2, q2);
        x += h * k2;
        logq -= h * q2;
        break;
      case ode::Method::Rk4:
        aug(x, t, k1, q1);
        tmp = x + (0.5 * h) * k1;
        aug(tmp, t + 0.5 * h, k2, q2);
        tmp = x + (0.5 * h) * k2;
        aug(tmp, t + 0.5 * h, k3, q3);
        tmp = x + h * k3;
        aug(tmp, t + h, k4, q4);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        logq -= (h / 6.0) * (q1 + 2.0 * q2 + 2.0 * q3 + q4);
        break;
    }
    if (!x.allFinite() || !std::isfinite(logq))
      fail(ErrorKind::NonFinite, "flow diverged at stage " + std::to_string(stage + 1) +
                                     ", particle " + std::to_string(particle) + ", step " +
                                     std::to_string(s));
  }
}

ForwardTrace run_forward(const FlowNet& net, const ode::IntegratorConfig& cfg,
                         const InferenceTask& task, const ParticleEnsemble& prior,
                         const ParamVector& params, bool keep_steps) {
  const int m_total = task.stages();
  const int n = prior.count();
  const int d = net.dims().d;
  require(prior.dim() == d, ErrorKind::DimMismatch, "prior ensemble dimension mismatch");
  prior.validate();

  ForwardTrace trace;
  trace.stages.reserve(m_total);
  Rng task_rng(task.seed);

  Mat positions = prior.positions;
  Vec logq = prior.logdens;
  const bool hmm = task.model.hidden_markov();
  const double h = cfg.step_size();

  for (int m = 0; m < m_total; ++m) {
    StageTrace st;
    if (hmm) {
      positions = task.model.transition->transition(positions, task_rng);
      st.has_kde = true;
      st.kde = Kde::with_scott(positions);
      for (int i = 0; i < n; ++i) logq[i] = st.kde.log_density(positions.row(i).transpose());
    }
    st.flow_start = positions;
    st.start_logq = logq;
    st.ctx = net.context(positions, task.observations[m], params);

    AugEval aug{net, params, st.ctx, {}, {}};
    Vec x(d);
    if (keep_steps) {
      std::vector<Mat> steps(cfg.steps, Mat(n, d));
      for (int i = 0; i < n; ++i) {
        x = positions.row(i).transpose();
        double q = logq[i];
        for (int s = 0; s < cfg.steps; ++s) {
          steps[s].row(i) = x.transpose();
          ode::IntegratorConfig one{cfg.method, 1, cfg.t0 + s * h, cfg.t0 + (s + 1) * h};
          advance_particle(aug, one, x, q, i, m);
        }
        positions.row(i) = x.transpose();
        logq[i] = q;
      }
      st.steps = std::move(steps);
    } else {
      for (int i = 0; i < n; ++i) {
        x = positions.row(i).transpose();
        double q = logq[i];
        advance_particle(aug, cfg, x, q, i, m);
        positions.row(i) = x.transpose();
        logq[i] = q;
      }
    }

    st.end_positions = positions;
    st.end_logq = logq;
    st.target_vals.resize(n);
    st.target_grads.resize(n, d);
    StageTargetEval target{&task, m, st.has_kde ? &st.kde : nullptr};
    Vec grad(d);
    for (int i = 0; i < n; ++i) {
      st.target_vals[i] = target.value_with_grad(positions.row(i).transpose(), grad);
      st.target_grads.row(i) = grad.transpose();
      trace.loss += logq[i] - st.target_vals[i];
    }

    ParticleEnsemble out;
    out.positions = positions;
    out.logdens = logq;
    out.stage = prior.stage + m + 1;
    out.validate();
    trace.ensembles.push_back(std::move(out));
    trace.stages.push_back(std::move(st));
  }
  trace.loss /= static_cast<double>(m_total) * n;
  return trace;
}

}  // namespace

NetworkField::NetworkField(const FlowNet& net, Vec ctx, const ParamVector& params)
    : net_(net), ctx_(std::move(ctx)), params_(params) {}

Vec NetworkField::velocity(const Vec& x, double t) const {
  net_.pack_field_input(ctx_, x, t, in_);
  return net_.velocity_graph().eval(in_, params_, ws_);
}

double NetworkField::divergence(const Vec& x, double t) const {
  net_.pack_field_input(ctx_, x, t, in_);
  return net_.divergence_graph().eval(in_, params_, ws_)[0];
}

GradLikNetworkField::GradLikNetworkField(const FlowNet& net, Vec particle_embedding,
                                         const models::ModelSpec& model,
                                         const std::vector<Vec>& batch, const ParamVector& params)
    : net_(net),
      particle_embedding_(std::move(particle_embedding)),
      model_(model),
      batch_(batch),
      params_(params) {
  require(net_.dims().obs_input == ObsInput::GradLogLik, ErrorKind::ConfigError,
          "flow was not built for grad-log-likelihood input");
}

Vec GradLikNetworkField::context_at(const Vec& x) const {
  std::vector<Vec> grads;
  grads.reserve(batch_.size());
  for (const Vec& o : batch_) grads.push_back(model_.grad_x_log_lik(o, x));
  Vec ctx(net_.dims().ctx_size());
  ctx.head(net_.dims().e_x) = particle_embedding_;
  ctx.tail(net_.dims().e_o) = net_.embed_observations(grads, params_);
  return ctx;
}

Vec GradLikNetworkField::velocity(const Vec& x, double t) const {
  net_.pack_field_input(context_at(x), x, t, in_);
  return net_.velocity_graph().eval(in_, params_, ws_);
}

double GradLikNetworkField::divergence(const Vec& x, double t) const {
  // The observation slot is held at its value for this x; its own dependence
  // on x would need likelihood Hessians, which plug-ins do not supply.
  net_.pack_field_input(context_at(x), x, t, in_);
  return net_.divergence_graph().eval(in_, params_, ws_)[0];
}

ParticleEnsemble apply_operator(const ParticleEnsemble& ensemble, const StageField& field,
                                const ode::IntegratorConfig& cfg) {
  ensemble.validate();
  cfg.validate();
  const int n = ensemble.count();
  const int d = ensemble.dim();
  ParticleEnsemble out = ensemble;
  out.stage = ensemble.stage + 1;
  const double h = cfg.step_size();
  Vec s(d + 1);
  auto aug = [&](const Vec& state, double tt) {
    Vec ds(d + 1);
    ds.head(d) = field.velocity(state.head(d), tt);
    ds[d] = -field.divergence(state.head(d), tt);
    return ds;
  };
  for (int i = 0; i < n; ++i) {
    s.head(d) = ensemble.positions.row(i).transpose();
    s[d] = ensemble.logdens[i];
    for (int k = 0; k < cfg.steps; ++k) {
      ode::step(cfg.method, aug, s, cfg.t0 + k * h, h);
      if (!s.allFinite())
        fail(ErrorKind::NonFinite,
             "flow diverged at particle " + std::to_string(i) + ", step " + std::to_string(k));
    }
    out.positions.row(i) = s.head(d).transpose();
    out.logdens[i] = s[d];
  }
  return out;
}

PfbrOperator::PfbrOperator(flownet::FlowDims dims, ode::IntegratorConfig cfg)
    : net_(dims), cfg_(cfg) {
  cfg_.validate();
}

ParticleEnsemble PfbrOperator::draw_prior(const InferenceTask& task, int n, Rng& rng) const {
  require(n >= 1, ErrorKind::ConfigError, "need at least one particle");
  ParticleEnsemble e;
  e.positions = task.prior.sample(rng, n);
  e.logdens.resize(n);
  for (int i = 0; i < n; ++i) e.logdens[i] = task.prior.log_density(e.positions.row(i).transpose());
  e.stage = 0;
  return e;
}

ParticleEnsemble PfbrOperator::apply(const ParticleEnsemble& ensemble,
                                     const std::vector<Vec>& obs_batch,
                                     const ParamVector& params) const {
  Vec ctx = net_.context(ensemble.positions, obs_batch, params);
  NetworkField field(net_, std::move(ctx), params);
  return apply_operator(ensemble, field, cfg_);
}

std::vector<ParticleEnsemble> PfbrOperator::sequential_inference(const InferenceTask& task,
                                                                 const ParticleEnsemble& prior,
                                                                 const ParamVector& params) const {
  if (task.observations.empty()) return {};
  task.validate();
  if (obs_input() == ObsInput::Raw) {
    ForwardTrace t = run_forward(net_, cfg_, task, prior, params, false);
    return std::move(t.ensembles);
  }
  // grad-log-likelihood input: transport with the model-aware field
  prior.validate();
  Rng task_rng(task.seed);
  ParticleEnsemble cur = prior;
  std::vector<ParticleEnsemble> out;
  for (int m = 0; m < task.stages(); ++m) {
    if (task.model.hidden_markov()) {
      cur.positions = task.model.transition->transition(cur.positions, task_rng);
      Kde kde = Kde::with_scott(cur.positions);
      for (int i = 0; i < cur.count(); ++i)
        cur.logdens[i] = kde.log_density(cur.positions.row(i).transpose());
    }
    GradLikNetworkField field(net_, net_.embed_particles(cur.positions, params), task.model,
                              task.observations[m], params);
    cur = apply_operator(cur, field, cfg_);
    out.push_back(cur);
  }
  return out;
}

LossResult PfbrOperator::task_loss(const InferenceTask& task, const ParticleEnsemble& prior,
                                   const ParamVector& params) const {
  LossResult r;
  if (task.observations.empty()) return r;
  task.validate();
  require(obs_input() == ObsInput::Raw, ErrorKind::ConfigError,
          "losses and gradients require the raw-observation input mode");
  ForwardTrace t = run_forward(net_, cfg_, task, prior, params, false);
  r.loss = t.loss;
  r.ensembles = std::move(t.ensembles);
  return r;
}

GradResult PfbrOperator::grad_backprop(const InferenceTask& task, const ParticleEnsemble& prior,
                                       const ParamVector& params, bool detach_context) const {
  GradResult r;
  r.grad = ParamVector(layout());
  if (task.observations.empty()) return r;
  task.validate();
  require(obs_input() == ObsInput::Raw, ErrorKind::ConfigError,
          "losses and gradients require the raw-observation input mode");

  ForwardTrace trace = run_forward(net_, cfg_, task, prior, params, true);
  r.loss = trace.loss;
  r.ensembles = trace.ensembles;

  const int m_total = task.stages();
  const int n = prior.count();
  const int d = net_.dims().d;
  const int ctx_len = net_.dims().ctx_size();
  const double h = cfg_.step_size();
  const double norm = 1.0 / (static_cast<double>(m_total) * n);

  Mat x_bar = Mat::Zero(n, d);
  Vec q_bar = Vec::Zero(n);
  ad::Workspace ws;
  Vec in(net_.field_input_size());
  Vec gin(net_.field_input_size());
  Vec cot(d + 1);

  // reverse sweep through one explicit step for one particle, accumulating
  // into the step-start cotangent row, ctx_bar and the parameter gradient
  auto reverse_step = [&](const AugEval& aug, const Vec& x0, double t, int row, double qb,
                          Vec& ctx_bar) {
    Vec xb = x_bar.row(row).transpose();
    auto vjp_at = [&](const Vec& point, double tt, const Vec& kbar_x, double kbar_q) -> Vec {
      net_.pack_field_input(aug.ctx, point, tt, in);
      cot.head(d) = kbar_x;
      cot[d] = -kbar_q;  // log q integrates -div
      gin.setZero();
      net_.augmented_graph().vjp_accumulate(in, params, cot, &gin, &r.grad, ws);
      ctx_bar += gin.head(ctx_len);
      return gin.segment(ctx_len, d);
    };
    switch (cfg_.method) {
      case ode::Method::Euler: {
        Vec b0 = vjp_at(x0, t, h * xb, h * qb);
        x_bar.row(row) += b0.transpose();
        break;
      }
      case ode::Method::Midpoint: {
        Vec k1(d);
        double q1 = 0;
        aug(x0, t, k1, q1);
        Vec a1 = x0 + (0.5 * h) * k1;
        Vec b1 = vjp_at(a1, t + 0.5 * h, h * xb, h * qb);
        Vec b0 = vjp_at(x0, t, (0.5 * h) * b1, 0.0);
        x_bar.row(row) += (b1 + b0).transpose();
        break;
      }
      case ode::Method::Rk4: {
        Vec k1(d), k2(d), k3(d);
        double q1 = 0, q2 = 0, q3 = 0;
        aug(x0, t, k1, q1);
        Vec a1 = x0 + (0.5 * h) * k1;
        aug(a1, t + 0.5 * h, k2, q2);
        Vec a2 = x0 + (0.5 * h) * k2;
        aug(a2, t + 0.5 * h, k3, q3);
        Vec a3 = x0 + h * k3;

        Vec g4 = vjp_at(a3, t + h, (h / 6.0) * xb, (h / 6.0) * qb);
        Vec g3 = vjp_at(a2, t + 0.5 * h, (2.0 * h / 6.0) * xb + h * g4, (2.0 * h / 6.0) * qb);
        Vec g2 =
            vjp_at(a1, t + 0.5 * h, (2.0 * h / 6.0) * xb + (0.5 * h) * g3, (2.0 * h / 6.0) * qb);
        Vec g1 = vjp_at(x0, t, (h / 6.0) * xb + (0.5 * h) * g2, (h / 6.0) * qb);
        x_bar.row(row) += (g1 + g2 + g3 + g4).transpose();
        break;
      }
    }
  };

  for (int m = m_total - 1; m >= 0; --m) {
    const StageTrace& st = trace.stages[m];
    Mat kde_bases_bar = Mat::Zero(n, d);
    double sigma_bar = 0.0;

    // loss terms at the stage end
    for (int i = 0; i < n; ++i) {
      q_bar[i] += norm;
      x_bar.row(i) -= norm * st.target_grads.row(i);
      if (st.has_kde && !detach_context)
        st.kde.vjp(st.end_positions.row(i).transpose(), -norm, nullptr, &kde_bases_bar, &sigma_bar);
    }

    // back through the flow steps
    Vec ctx_bar = Vec::Zero(ctx_len);
    AugEval aug{net_, params, st.ctx, {}, {}};
    for (int s = cfg_.steps - 1; s >= 0; --s) {
      const double t = cfg_.t0 + s * h;
      for (int i = 0; i < n; ++i)
        reverse_step(aug, st.steps[s].row(i).transpose(), t, i, q_bar[i], ctx_bar);
    }

    // context coupling back onto the stage-start ensemble and parameters
    if (!detach_context) {
      Vec pe_bar = ctx_bar.head(net_.dims().e_x) / static_cast<double>(n);
      const auto& batch = task.observations[m];
      Vec oe_bar = ctx_bar.tail(net_.dims().e_o) / static_cast<double>(batch.size());
      Vec gx = Vec::Zero(d);
      for (int i = 0; i < n; ++i) {
        gx.setZero();
        net_.phi_graph().vjp_accumulate(st.flow_start.row(i).transpose(), params, pe_bar, &gx,
                                        &r.grad, ws);
        x_bar.row(i) += gx.transpose();
      }
      for (const Vec& o : batch)
        net_.g_graph().vjp_accumulate(o, params, oe_bar, nullptr, &r.grad, ws);
    }

    if (st.has_kde) {
      // log q was reset to the KDE self-density at the stage start
      for (int i = 0; i < n; ++i) {
        Vec xb = Vec::Zero(d);
        st.kde.vjp(st.flow_start.row(i).transpose(), q_bar[i], &xb,
                   detach_context ? nullptr : &kde_bases_bar,
                   detach_context ? nullptr : &sigma_bar);
        x_bar.row(i) += xb.transpose();
      }
      q_bar.setZero();
      if (!detach_context) {
        x_bar += kde_bases_bar;
        Kde::scott_vjp(st.flow_start, sigma_bar, x_bar);
      }
      // transition x~ = A x + eps
      x_bar = (x_bar * task.model.transition->a).eval();
    }
  }
  r.grad.check_finite("parameter gradient");
  return r;
}

GradResult PfbrOperator::grad_adjoint(const InferenceTask& task, const ParticleEnsemble& prior,
                                      const ParamVector& params) const {
  GradResult r;
  r.grad = ParamVector(layout());
  if (task.observations.empty()) return r;
  task.validate();
  require(obs_input() == ObsInput::Raw, ErrorKind::ConfigError,
          "losses and gradients require the raw-observation input mode");

  ForwardTrace trace = run_forward(net_, cfg_, task, prior, params, false);
  r.loss = trace.loss;
  r.ensembles = trace.ensembles;

  const int m_total = task.stages();
  const int n = prior.count();
  const int d = net_.dims().d;
  const int ctx_len = net_.dims().ctx_size();
  const int p_len = static_cast<int>(layout()->total_size());
  const double inv_m = 1.0 / static_cast<double>(m_total);
  const bool hmm = task.model.hidden_markov();

  ad::Workspace ws;
  Vec in(net_.field_input_size());
  Vec gin(net_.field_input_size());
  Vec cot(d + 1);
  ParamVector gp(layout());

  // Backward state: [x; p_x; z]. The y-adjoint p_y is constant within a
  // stage (f and div do not depend on y) and is carried alongside.
  for (int i = 0; i < n; ++i) {
    Vec state = Vec::Zero(d + d + p_len);
    double p_y = 0.0;
    for (int m = m_total - 1; m >= 0; --m) {
      const StageTrace& st = trace.stages[m];

      // inject (1/M) dL_m/d(x, y) at t = T; L_m = -y_m(T) - log p(x, O_m)
      state.head(d) = st.end_positions.row(i).transpose();
      state.segment(d, d) -= inv_m * st.target_grads.row(i).transpose();
      p_y += -inv_m;

      auto field = [&](const Vec& s, double t) -> Vec {
        Vec ds(d + d + p_len);
        net_.pack_field_input(st.ctx, s.head(d), t, in);
        cot.head(d) = s.segment(d, d);
        cot[d] = p_y;  // adjoint of y, whose forward rate is +div
        gin.setZero();
        gp.set_zero();
        net_.augmented_graph().vjp_accumulate(in, params, cot, &gin, &gp, ws);
        ds.head(d) = ws.val[static_cast<std::size_t>(net_.augmented_graph().output_node())].head(d);
        ds.segment(d, d) = -gin.segment(ctx_len, d);
        ds.tail(p_len) = -gp.values();
        return ds;
      };
      ode::IntegratorConfig back{cfg_.method, cfg_.steps, cfg_.t1, cfg_.t0};
      state = ode::solve_ivp(field, state, back);

      if (hmm) {
        // y was reset to -log kde(x~) at the stage start
        Vec x_tilde = st.flow_start.row(i).transpose();
        state.segment(d, d) -= p_y * st.kde.grad_log_density(x_tilde);
        p_y = 0.0;
        state.segment(d, d) = (task.model.transition->a.transpose() * state.segment(d, d)).eval();
      }
    }
    r.grad.values() += state.tail(p_len);
  }
  r.grad.values() /= static_cast<double>(n);
  r.grad.check_finite("adjoint gradient");
  return r;
}

}  // namespace pfbr::op
