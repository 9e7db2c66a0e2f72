#pragma once

#include "pfbr/common.hpp"
#include "pfbr/graph.hpp"
#include "pfbr/param_vector.hpp"
#include "pfbr/rng.hpp"

#include <string>
#include <vector>

namespace pfbr::flownet {

// What the flow receives about the likelihood: the raw observation batch, or
// grad_x log p(o|x) evaluated at the moving particle. The latter is
// model-aware and only used at inference time; gradients treat it as data.
enum class ObsInput { Raw, GradLogLik };

struct FlowDims {
  int d = 1;             // state dimension
  int obs_dim = 1;       // observation vector length
  int e_x = 8;           // particle embedding width
  int e_o = 8;           // observation embedding width
  int phi_hidden = 16;
  int g_hidden = 16;
  int gated_hidden = 16;
  int k = 2;             // gated layers
  ObsInput obs_input = ObsInput::Raw;

  int ctx_size() const { return e_x + e_o; }
  int g_input_size() const { return obs_input == ObsInput::Raw ? obs_dim : d; }
  void validate() const;
  bool operator==(const FlowDims&) const = default;
};

// All learnable weights, flat with named segments:
//   phi.w1 phi.b1 phi.w2 phi.b2   particle embedding net
//   g.w1 g.b1 g.w2 g.b2           observation embedding net
//   gate<j>.w .b .v .c            gated layers, j = 1..k
struct FlowParams {
  FlowDims dims;
  ParamVector values;
};

// Networks compiled once per FlowDims into autodiff graphs:
//   phi:      x -> phi(x)
//   g:        o -> g(o)
//   velocity: [ctx; x; t] -> f
//   augmented:[ctx; x; t] -> [f; div f]   (divergence exact, via d forward
//                                          tangents along the x slots only)
class FlowNet {
 public:
  explicit FlowNet(FlowDims dims);

  static LayoutPtr make_layout(const FlowDims& dims);

  const FlowDims& dims() const { return dims_; }
  const LayoutPtr& layout() const { return layout_; }

  // Uniform [-s, s] with s = 1/sqrt(fan-in); the last gated layer's w, b and
  // c are scaled by 0.1 so the initial flow is near zero (c feeds the output
  // drift term t*c directly, so it must shrink with w and b).
  FlowParams init_params(Rng& rng) const;

  Vec embed_particles(const Mat& positions, const ParamVector& p) const;
  Vec embed_observations(const std::vector<Vec>& batch, const ParamVector& p) const;
  Vec context(const Mat& positions, const std::vector<Vec>& batch, const ParamVector& p) const;

  Vec velocity(const Vec& ctx, const Vec& x, double t, const ParamVector& p) const;
  double divergence(const Vec& ctx, const Vec& x, double t, const ParamVector& p) const;

  // Hutchinson estimate with Rademacher probes; cheaper than the exact path
  // for large d.
  double divergence_hutchinson(const Vec& ctx, const Vec& x, double t, const ParamVector& p,
                               int probes, Rng& rng) const;

  const ad::Graph& phi_graph() const { return phi_; }
  const ad::Graph& g_graph() const { return g_; }
  const ad::Graph& velocity_graph() const { return velocity_; }
  const ad::Graph& augmented_graph() const { return augmented_; }
  const ad::Graph& divergence_graph() const { return divergence_; }

  int field_input_size() const { return dims_.ctx_size() + dims_.d + 1; }
  void pack_field_input(const Vec& ctx, const Vec& x, double t, Vec& out) const;

 private:
  FlowDims dims_;
  LayoutPtr layout_;
  ad::Graph phi_;
  ad::Graph g_;
  ad::Graph velocity_;
  ad::Graph augmented_;
  ad::Graph divergence_;
};

}  // namespace pfbr::flownet
