#pragma once

#include "pfbr/common.hpp"
#include "pfbr/param_vector.hpp"

#include <string_view>
#include <vector>

namespace pfbr::ad {

// Fixed primitive set. Input/Param/Const are leaves; Concat/Slice are index
// plumbing; the rest is arithmetic. The set is closed under the forward
// tangent transform below, which is what makes reverse-over-forward work.
enum class Op : std::uint8_t {
  Input,
  Param,
  Const,
  MatMul,
  Add,
  Mul,
  Tanh,
  Sigmoid,
  Sum,
  Scale,
  Concat,
  Slice,
};

struct Node {
  Op op;
  int a = -1;
  int b = -1;
  int rows = 0;
  int cols = 1;
  double alpha = 1.0;  // Scale
  int begin = 0;       // Slice
  int seg = -1;        // Param segment index
  Vec payload;         // Const values, row-major

  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct VjpResult {
  Vec grad_input;
  ParamVector grad_params;
};

// Reusable evaluation buffers; sized on first use, then allocation-free.
struct Workspace {
  std::vector<Vec> val;
  std::vector<Vec> bar;
};

// A straight-line program over the primitive set with one input vector and a
// named-segment parameter vector. Node ids are topologically ordered by
// construction. Immutable once built (the builder methods are only used
// before evaluation starts), so concurrent evaluations against shared
// params are safe as long as each thread owns its Workspace.
class Graph {
 public:
  Graph(LayoutPtr layout, int input_size);

  // -- builders (return node ids) --
  int input() const { return 0; }
  int param(std::string_view name);
  int constant(Vec v);          // column vector
  int constant_matrix(Mat m);   // stored row-major
  int matmul(int a, int b);
  int add(int a, int b);
  int mul(int a, int b);
  int tanh(int a);
  int sigmoid(int a);
  int sum(int a);
  int scale(int a, double alpha);
  int concat(int a, int b);               // column vectors only
  int slice(int a, int begin, int len);   // rows of a column vector
  void set_output(int id);

  // Appends forward-mode tangent nodes for the primal slice of the graph,
  // seeding the input's tangent with the constant `seed`. Returns, per primal
  // node, the id of its tangent node (-1 when the tangent is structurally
  // zero). `differentiate_all` instead transforms every existing node,
  // nesting forward over forward; nesting is capped at depth 2 overall with
  // the reverse sweep counting as one level.
  std::vector<int> append_tangent(const Vec& seed, bool differentiate_all = false);

  // -- execution --
  Vec eval(const Vec& x, const ParamVector& params) const;
  Vec eval(const Vec& x, const ParamVector& params, Workspace& ws) const;

  // Directional derivative (d fn / d input) . tangent via dual evaluation.
  Vec jvp(const Vec& x, const ParamVector& params, const Vec& tangent) const;

  // (d fn / d input)^T . cot and (d fn / d params)^T . cot.
  VjpResult vjp(const Vec& x, const ParamVector& params, const Vec& cotangent) const;

  // Accumulating form used by the hot reverse sweeps: adds into grad_input
  // and grad_params (either may be null). ws.val holds the forward values on
  // return.
  void vjp_accumulate(const Vec& x, const ParamVector& params, const Vec& cotangent,
                      Vec* grad_input, ParamVector* grad_params, Workspace& ws) const;

  // Gradient of a scalar-valued graph; the graph may contain tangent nodes
  // (reverse-over-forward).
  VjpResult grad_of_scalar(const Vec& x, const ParamVector& params) const;

  int input_size() const { return input_size_; }
  int output_node() const { return output_; }
  int output_size() const;
  int node_count() const { return static_cast<int>(nodes_.size()); }
  const LayoutPtr& layout() const { return layout_; }
  int forward_levels() const { return forward_levels_; }

 private:
  int push(Node n);
  const Node& at(int id) const;
  void ensure_vector(int id, const char* what) const;
  void forward(const Vec& x, const ParamVector& params, std::vector<Vec>& val) const;
  void check_reverse_depth() const;

  LayoutPtr layout_;
  std::vector<Node> nodes_;
  int input_size_ = 0;
  int output_ = -1;
  int forward_levels_ = 0;
  int primal_count_ = -1;  // node count before the first tangent append
};

}  // namespace pfbr::ad
