#include "pfbr/flownet.hpp"

#include <cstdlib>

namespace pfbr::flownet {

namespace {

double first_layer_shrink_env() {
  const char* v = std::getenv("PFBR_FLS");
  return v ? std::atof(v) : 1.0;
}
const double kFirstLayerShrink = first_layer_shrink_env();


// input -> W2 tanh(W1 x + b1) + b2
ad::Graph dense2(const LayoutPtr& layout, int in, const std::string& prefix) {
  ad::Graph g(layout, in);
  int h = g.tanh(g.add(g.matmul(g.param(prefix + ".w1"), g.input()), g.param(prefix + ".b1")));
  g.set_output(g.add(g.matmul(g.param(prefix + ".w2"), h), g.param(prefix + ".b2")));
  return g;
}

// Gated_j(y, t) = (W_j y + b_j) * sigmoid(t v_j + c_j) + t c_j, stacked with
// the context re-fed at every layer.
ad::Graph build_velocity(const LayoutPtr& layout, const FlowDims& dims) {
  const int ctx = dims.ctx_size();
  ad::Graph g(layout, ctx + dims.d + 1);
  int ctx_node = g.slice(g.input(), 0, ctx);
  int x_node = g.slice(g.input(), ctx, dims.d);
  int t_node = g.slice(g.input(), ctx + dims.d, 1);
  int u = x_node;
  for (int j = 1; j <= dims.k; ++j) {
    const std::string p = "gate" + std::to_string(j);
    int y = g.concat(ctx_node, u);
    int lin = g.add(g.matmul(g.param(p + ".w"), y), g.param(p + ".b"));
    int gate = g.sigmoid(g.add(g.matmul(g.param(p + ".v"), t_node), g.param(p + ".c")));
    int drift = g.matmul(g.param(p + ".c"), t_node);
    u = g.add(g.mul(lin, gate), drift);
  }
  g.set_output(u);
  return g;
}

// Appends sum_i (d f_i / d x_i) built from one forward tangent per state
// coordinate, context and time held fixed. Returns the divergence node id.
int append_divergence(ad::Graph& g, const FlowDims& dims) {
  const int ctx = dims.ctx_size();
  const int f_node = g.output_node();
  int div = -1;
  for (int i = 0; i < dims.d; ++i) {
    Vec seed = Vec::Zero(g.input_size());
    seed[ctx + i] = 1.0;
    auto tangent = g.append_tangent(seed);
    int comp = g.slice(tangent[f_node], i, 1);
    div = div < 0 ? comp : g.add(div, comp);
  }
  return div;
}

}  // namespace

void FlowDims::validate() const {
  require(d >= 1 && obs_dim >= 1 && e_x >= 1 && e_o >= 1, ErrorKind::ConfigError,
          "flow dimensions must be positive");
  require(phi_hidden >= 1 && g_hidden >= 1 && gated_hidden >= 1, ErrorKind::ConfigError,
          "hidden widths must be positive");
  require(k >= 1, ErrorKind::ConfigError, "need at least one gated layer");
}

LayoutPtr FlowNet::make_layout(const FlowDims& dims) {
  dims.validate();
  auto layout = std::make_shared<ParamLayout>();
  layout->add("phi.w1", dims.phi_hidden, dims.d);
  layout->add("phi.b1", dims.phi_hidden, 1);
  layout->add("phi.w2", dims.e_x, dims.phi_hidden);
  layout->add("phi.b2", dims.e_x, 1);
  layout->add("g.w1", dims.g_hidden, dims.g_input_size());
  layout->add("g.b1", dims.g_hidden, 1);
  layout->add("g.w2", dims.e_o, dims.g_hidden);
  layout->add("g.b2", dims.e_o, 1);
  const int ctx = dims.ctx_size();
  for (int j = 1; j <= dims.k; ++j) {
    const std::string p = "gate" + std::to_string(j);
    const int in = ctx + (j == 1 ? dims.d : dims.gated_hidden);
    const int out = j == dims.k ? dims.d : dims.gated_hidden;
    layout->add(p + ".w", out, in);
    layout->add(p + ".b", out, 1);
    layout->add(p + ".v", out, 1);
    layout->add(p + ".c", out, 1);
  }
  return layout;
}

FlowNet::FlowNet(FlowDims dims)
    : dims_(dims),
      layout_(make_layout(dims)),
      phi_(dense2(layout_, dims.d, "phi")),
      g_(dense2(layout_, dims.g_input_size(), "g")),
      velocity_(build_velocity(layout_, dims)),
      augmented_(velocity_),
      divergence_(velocity_) {
  int div_a = append_divergence(augmented_, dims_);
  augmented_.set_output(augmented_.concat(velocity_.output_node(), div_a));
  int div_d = append_divergence(divergence_, dims_);
  divergence_.set_output(div_d);
}

FlowParams FlowNet::init_params(Rng& rng) const {
  ParamVector p(layout_);
  const std::string last = "gate" + std::to_string(dims_.k);
  for (int s = 0; s < layout_->count(); ++s) {
    const Segment& seg = layout_->segment(s);
    // fan-in is the layer input size for weight matrices, 1 for the
    // bias/gate vectors
    double fan_in = seg.cols > 1 ? static_cast<double>(seg.cols) : 1.0;
    double scale = 1.0 / std::sqrt(fan_in);
    if (seg.name == "phi.w1" || seg.name == "g.w1") scale *= kFirstLayerShrink;
    if (seg.name.starts_with(last) && !seg.name.ends_with(".v")) scale *= 0.1;
    auto block = p.flat(s);
    for (Eigen::Index i = 0; i < block.size(); ++i) block[i] = rng.uniform(-scale, scale);
  }
  return FlowParams{dims_, std::move(p)};
}

namespace {

// Mean over set elements, accumulated in a canonical (lexicographically
// sorted) order so the result is bit-identical under any input permutation.
Vec canonical_mean(std::vector<Vec> items) {
  std::sort(items.begin(), items.end(), [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                        b.data() + b.size());
  });
  Vec acc = Vec::Zero(items.front().size());
  for (const Vec& v : items) acc += v;
  return acc / static_cast<double>(items.size());
}

}  // namespace

Vec FlowNet::embed_particles(const Mat& positions, const ParamVector& p) const {
  require(positions.rows() >= 1, ErrorKind::EmptyEnsemble, "no particles to embed");
  require(positions.cols() == dims_.d, ErrorKind::DimMismatch,
          "particle dimension " + std::to_string(positions.cols()) + ", expected " +
              std::to_string(dims_.d));
  ad::Workspace ws;
  std::vector<Vec> feats;
  feats.reserve(static_cast<std::size_t>(positions.rows()));
  Vec x(dims_.d);
  for (Eigen::Index n = 0; n < positions.rows(); ++n) {
    x = positions.row(n).transpose();
    feats.push_back(phi_.eval(x, p, ws));
  }
  return canonical_mean(std::move(feats));
}

Vec FlowNet::embed_observations(const std::vector<Vec>& batch, const ParamVector& p) const {
  require(!batch.empty(), ErrorKind::EmptyBatch, "no observations to embed");
  const int in = dims_.g_input_size();
  ad::Workspace ws;
  std::vector<Vec> feats;
  feats.reserve(batch.size());
  for (const Vec& o : batch) {
    require(o.size() == in, ErrorKind::DimMismatch,
            "observation length " + std::to_string(o.size()) + ", expected " + std::to_string(in));
    feats.push_back(g_.eval(o, p, ws));
  }
  return canonical_mean(std::move(feats));
}

Vec FlowNet::context(const Mat& positions, const std::vector<Vec>& batch,
                     const ParamVector& p) const {
  Vec ctx(dims_.ctx_size());
  ctx.head(dims_.e_x) = embed_particles(positions, p);
  ctx.tail(dims_.e_o) = embed_observations(batch, p);
  return ctx;
}

void FlowNet::pack_field_input(const Vec& ctx, const Vec& x, double t, Vec& out) const {
  require(ctx.size() == dims_.ctx_size(), ErrorKind::DimMismatch, "context length mismatch");
  require(x.size() == dims_.d, ErrorKind::DimMismatch, "state length mismatch");
  out.resize(field_input_size());
  out.head(ctx.size()) = ctx;
  out.segment(ctx.size(), x.size()) = x;
  out[out.size() - 1] = t;
}

Vec FlowNet::velocity(const Vec& ctx, const Vec& x, double t, const ParamVector& p) const {
  Vec in;
  pack_field_input(ctx, x, t, in);
  return velocity_.eval(in, p);
}

double FlowNet::divergence(const Vec& ctx, const Vec& x, double t, const ParamVector& p) const {
  Vec in;
  pack_field_input(ctx, x, t, in);
  return divergence_.eval(in, p)[0];
}

double FlowNet::divergence_hutchinson(const Vec& ctx, const Vec& x, double t, const ParamVector& p,
                                      int probes, Rng& rng) const {
  require(probes >= 1, ErrorKind::ConfigError, "need at least one probe");
  Vec in;
  pack_field_input(ctx, x, t, in);
  const int ctx_len = dims_.ctx_size();
  double acc = 0.0;
  Vec tangent = Vec::Zero(in.size());
  for (int k = 0; k < probes; ++k) {
    Vec v(dims_.d);
    for (int i = 0; i < dims_.d; ++i) v[i] = rng.below(2) == 0 ? -1.0 : 1.0;
    tangent.segment(ctx_len, dims_.d) = v;
    acc += v.dot(velocity_.jvp(in, p, tangent));
  }
  return acc / probes;
}

}  // namespace pfbr::flownet
