#include "pfbr/graph.hpp"

#include <string>

namespace pfbr::ad {

namespace {

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Param: return "param";
    case Op::Const: return "const";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Sum: return "sum";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
  }
  return "?";
}

using CMap = Eigen::Map<const RowMajorMat>;
using MMap = Eigen::Map<RowMajorMat>;

CMap as_mat(const Vec& v, const Node& n) { return {v.data(), n.rows, n.cols}; }
MMap as_mat(Vec& v, const Node& n) { return {v.data(), n.rows, n.cols}; }

}  // namespace

Graph::Graph(LayoutPtr layout, int input_size) : layout_(std::move(layout)), input_size_(input_size) {
  require(input_size >= 1, ErrorKind::ShapeMismatch, "graph input must be non-empty");
  Node in;
  in.op = Op::Input;
  in.rows = input_size;
  in.cols = 1;
  nodes_.push_back(std::move(in));
}

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Node& Graph::at(int id) const {
  require(id >= 0 && id < static_cast<int>(nodes_.size()), ErrorKind::ShapeMismatch,
          "node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

void Graph::ensure_vector(int id, const char* what) const {
  require(at(id).cols == 1, ErrorKind::ShapeMismatch, std::string(what) + " requires a column vector");
}

int Graph::param(std::string_view name) {
  require(layout_ != nullptr, ErrorKind::ShapeMismatch, "graph has no parameter layout");
  int seg = layout_->index_of(name);
  require(seg >= 0, ErrorKind::ShapeMismatch, "no segment named '" + std::string(name) + "'");
  Node n;
  n.op = Op::Param;
  n.seg = seg;
  n.rows = layout_->segment(seg).rows;
  n.cols = layout_->segment(seg).cols;
  return push(std::move(n));
}

int Graph::constant(Vec v) {
  Node n;
  n.op = Op::Const;
  n.rows = static_cast<int>(v.size());
  n.cols = 1;
  n.payload = std::move(v);
  return push(std::move(n));
}

int Graph::constant_matrix(Mat m) {
  Node n;
  n.op = Op::Const;
  n.rows = static_cast<int>(m.rows());
  n.cols = static_cast<int>(m.cols());
  RowMajorMat rm = m;
  n.payload = Eigen::Map<const Vec>(rm.data(), rm.size());
  return push(std::move(n));
}

int Graph::matmul(int a, int b) {
  const Node &na = at(a), &nb = at(b);
  require(na.cols == nb.rows, ErrorKind::ShapeMismatch,
          "matmul inner dimensions disagree (" + std::to_string(na.cols) + " vs " +
              std::to_string(nb.rows) + ")");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = nb.cols;
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  const Node &na = at(a), &nb = at(b);
  require(na.rows == nb.rows && na.cols == nb.cols, ErrorKind::ShapeMismatch, "add shape mismatch");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

int Graph::mul(int a, int b) {
  const Node &na = at(a), &nb = at(b);
  require(na.rows == nb.rows && na.cols == nb.cols, ErrorKind::ShapeMismatch, "mul shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

int Graph::tanh(int a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

int Graph::sigmoid(int a) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Sigmoid;
  n.a = a;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

int Graph::sum(int a) {
  Node n;
  n.op = Op::Sum;
  n.a = a;
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

int Graph::scale(int a, double alpha) {
  const Node& na = at(a);
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.alpha = alpha;
  n.rows = na.rows;
  n.cols = na.cols;
  return push(std::move(n));
}

int Graph::concat(int a, int b) {
  ensure_vector(a, "concat");
  ensure_vector(b, "concat");
  Node n;
  n.op = Op::Concat;
  n.a = a;
  n.b = b;
  n.rows = at(a).rows + at(b).rows;
  n.cols = 1;
  return push(std::move(n));
}

int Graph::slice(int a, int begin, int len) {
  ensure_vector(a, "slice");
  require(begin >= 0 && len >= 1 && begin + len <= at(a).rows, ErrorKind::ShapeMismatch,
          "slice range out of bounds");
  Node n;
  n.op = Op::Slice;
  n.a = a;
  n.begin = begin;
  n.rows = len;
  n.cols = 1;
  return push(std::move(n));
}

void Graph::set_output(int id) {
  (void)at(id);
  output_ = id;
}

int Graph::output_size() const {
  require(output_ >= 0, ErrorKind::ShapeMismatch, "graph output not set");
  return static_cast<int>(at(output_).size());
}

void Graph::forward(const Vec& x, const ParamVector& params, std::vector<Vec>& val) const {
  require(x.size() == input_size_, ErrorKind::ShapeMismatch,
          "input length " + std::to_string(x.size()) + ", expected " + std::to_string(input_size_));
  if (layout_) {
    require(params.layout() && (params.layout() == layout_ || params.layout()->same_shapes(*layout_)),
            ErrorKind::ShapeMismatch, "parameter layout does not match graph layout");
  }
  val.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    Vec& out = val[i];
    switch (n.op) {
      case Op::Input:
        out = x;
        break;
      case Op::Param:
        out = params.flat(n.seg);
        break;
      case Op::Const:
        out = n.payload;
        break;
      case Op::MatMul: {
        out.resize(static_cast<Eigen::Index>(n.size()));
        as_mat(out, n).noalias() = as_mat(val[n.a], nodes_[n.a]) * as_mat(val[n.b], nodes_[n.b]);
        break;
      }
      case Op::Add:
        out = val[n.a] + val[n.b];
        break;
      case Op::Mul:
        out = val[n.a].cwiseProduct(val[n.b]);
        break;
      case Op::Tanh:
        out = val[n.a].array().tanh();
        break;
      case Op::Sigmoid:
        out = 1.0 / (1.0 + (-val[n.a].array()).exp());
        break;
      case Op::Sum:
        out.resize(1);
        out[0] = val[n.a].sum();
        break;
      case Op::Scale:
        out = n.alpha * val[n.a];
        break;
      case Op::Concat: {
        out.resize(n.rows);
        out.head(nodes_[n.a].rows) = val[n.a];
        out.tail(nodes_[n.b].rows) = val[n.b];
        break;
      }
      case Op::Slice:
        out = val[n.a].segment(n.begin, n.rows);
        break;
    }
    if (!out.allFinite())
      fail(ErrorKind::NonFinite,
           std::string("non-finite value at node ") + std::to_string(i) + " (" + op_name(n.op) + ")");
  }
}

Vec Graph::eval(const Vec& x, const ParamVector& params) const {
  Workspace ws;
  return eval(x, params, ws);
}

Vec Graph::eval(const Vec& x, const ParamVector& params, Workspace& ws) const {
  require(output_ >= 0, ErrorKind::ShapeMismatch, "graph output not set");
  forward(x, params, ws.val);
  return ws.val[static_cast<std::size_t>(output_)];
}

Vec Graph::jvp(const Vec& x, const ParamVector& params, const Vec& tangent) const {
  require(output_ >= 0, ErrorKind::ShapeMismatch, "graph output not set");
  require(tangent.size() == input_size_, ErrorKind::ShapeMismatch,
          "tangent length does not match input length");
  std::vector<Vec> val;
  forward(x, params, val);
  std::vector<Vec> dot(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    Vec& d = dot[i];
    switch (n.op) {
      case Op::Input:
        d = tangent;
        break;
      case Op::Param:
      case Op::Const:
        d = Vec::Zero(static_cast<Eigen::Index>(n.size()));
        break;
      case Op::MatMul: {
        d.resize(static_cast<Eigen::Index>(n.size()));
        as_mat(d, n).noalias() = as_mat(dot[n.a], nodes_[n.a]) * as_mat(val[n.b], nodes_[n.b]);
        as_mat(d, n).noalias() += as_mat(val[n.a], nodes_[n.a]) * as_mat(dot[n.b], nodes_[n.b]);
        break;
      }
      case Op::Add:
        d = dot[n.a] + dot[n.b];
        break;
      case Op::Mul:
        d = dot[n.a].cwiseProduct(val[n.b]) + val[n.a].cwiseProduct(dot[n.b]);
        break;
      case Op::Tanh:
        d = (1.0 - val[i].array().square()).matrix().cwiseProduct(dot[n.a]);
        break;
      case Op::Sigmoid:
        d = (val[i].array() * (1.0 - val[i].array())).matrix().cwiseProduct(dot[n.a]);
        break;
      case Op::Sum:
        d.resize(1);
        d[0] = dot[n.a].sum();
        break;
      case Op::Scale:
        d = n.alpha * dot[n.a];
        break;
      case Op::Concat: {
        d.resize(n.rows);
        d.head(nodes_[n.a].rows) = dot[n.a];
        d.tail(nodes_[n.b].rows) = dot[n.b];
        break;
      }
      case Op::Slice:
        d = dot[n.a].segment(n.begin, n.rows);
        break;
    }
    if (!d.allFinite())
      fail(ErrorKind::NonFinite,
           std::string("non-finite tangent at node ") + std::to_string(i) + " (" + op_name(n.op) + ")");
  }
  return dot[static_cast<std::size_t>(output_)];
}

void Graph::check_reverse_depth() const {
  require(forward_levels_ + 1 <= 2, ErrorKind::UnsupportedNesting,
          "differentiation nesting depth would exceed 2");
}

void Graph::vjp_accumulate(const Vec& x, const ParamVector& params, const Vec& cotangent,
                           Vec* grad_input, ParamVector* grad_params, Workspace& ws) const {
  require(output_ >= 0, ErrorKind::ShapeMismatch, "graph output not set");
  check_reverse_depth();
  require(cotangent.size() == output_size(), ErrorKind::ShapeMismatch,
          "cotangent length does not match output length");
  forward(x, params, ws.val);
  const std::vector<Vec>& val = ws.val;

  ws.bar.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    ws.bar[i].resize(static_cast<Eigen::Index>(nodes_[i].size()));
    ws.bar[i].setZero();
  }
  std::vector<Vec>& bar = ws.bar;
  bar[static_cast<std::size_t>(output_)] = cotangent;

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Vec& c = bar[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::Input:
        if (grad_input) *grad_input += c;
        break;
      case Op::Param:
        if (grad_params) grad_params->flat(n.seg) += c;
        break;
      case Op::Const:
        break;
      case Op::MatMul: {
        const Node &na = nodes_[n.a], &nb = nodes_[n.b];
        as_mat(bar[n.a], na).noalias() += as_mat(c, n) * as_mat(val[n.b], nb).transpose();
        as_mat(bar[n.b], nb).noalias() += as_mat(val[n.a], na).transpose() * as_mat(c, n);
        break;
      }
      case Op::Add:
        bar[n.a] += c;
        bar[n.b] += c;
        break;
      case Op::Mul:
        bar[n.a] += c.cwiseProduct(val[n.b]);
        bar[n.b] += c.cwiseProduct(val[n.a]);
        break;
      case Op::Tanh:
        bar[n.a] += (1.0 - val[i].array().square()).matrix().cwiseProduct(c);
        break;
      case Op::Sigmoid:
        bar[n.a] += (val[i].array() * (1.0 - val[i].array())).matrix().cwiseProduct(c);
        break;
      case Op::Sum:
        bar[n.a].array() += c[0];
        break;
      case Op::Scale:
        bar[n.a] += n.alpha * c;
        break;
      case Op::Concat:
        bar[n.a] += c.head(nodes_[n.a].rows);
        bar[n.b] += c.tail(nodes_[n.b].rows);
        break;
      case Op::Slice:
        bar[n.a].segment(n.begin, n.rows) += c;
        break;
    }
  }
  if (grad_input && !grad_input->allFinite()) fail(ErrorKind::NonFinite, "non-finite input gradient");
  if (grad_params && !grad_params->values().allFinite())
    fail(ErrorKind::NonFinite, "non-finite parameter gradient");
}

VjpResult Graph::vjp(const Vec& x, const ParamVector& params, const Vec& cotangent) const {
  VjpResult r;
  r.grad_input = Vec::Zero(input_size_);
  r.grad_params = ParamVector(params.layout());
  Workspace ws;
  vjp_accumulate(x, params, cotangent, &r.grad_input, &r.grad_params, ws);
  return r;
}

VjpResult Graph::grad_of_scalar(const Vec& x, const ParamVector& params) const {
  require(output_size() == 1, ErrorKind::ShapeMismatch, "grad_of_scalar needs a scalar output");
  Vec one(1);
  one[0] = 1.0;
  return vjp(x, params, one);
}

std::vector<int> Graph::append_tangent(const Vec& seed, bool differentiate_all) {
  require(seed.size() == input_size_, ErrorKind::ShapeMismatch,
          "tangent seed length does not match input length");
  if (differentiate_all) {
    require(forward_levels_ + 1 <= 2, ErrorKind::UnsupportedNesting,
            "forward-mode nesting depth would exceed 2");
    ++forward_levels_;
  } else {
    forward_levels_ = std::max(forward_levels_, 1);
  }
  const int limit = differentiate_all ? static_cast<int>(nodes_.size())
                    : (primal_count_ >= 0 ? primal_count_ : static_cast<int>(nodes_.size()));
  if (primal_count_ < 0) primal_count_ = static_cast<int>(nodes_.size());

  auto zeros_like = [&](const Node& n) {
    Node z;
    z.op = Op::Const;
    z.rows = n.rows;
    z.cols = n.cols;
    z.payload = Vec::Zero(static_cast<Eigen::Index>(n.size()));
    return push(std::move(z));
  };
  auto ones_like = [&](const Node& n) {
    Node o;
    o.op = Op::Const;
    o.rows = n.rows;
    o.cols = n.cols;
    o.payload = Vec::Ones(static_cast<Eigen::Index>(n.size()));
    return push(std::move(o));
  };
  // t1 + t2 where -1 marks a structural zero.
  auto combine = [&](int t1, int t2) { return t1 < 0 ? t2 : (t2 < 0 ? t1 : add(t1, t2)); };

  std::vector<int> tan(static_cast<std::size_t>(limit), -1);
  for (int i = 0; i < limit; ++i) {
    const Node n = nodes_[static_cast<std::size_t>(i)];  // copy: push() reallocates
    int t = -1;
    switch (n.op) {
      case Op::Input:
        t = constant(seed);
        break;
      case Op::Param:
      case Op::Const:
        t = -1;
        break;
      case Op::MatMul: {
        int t1 = tan[n.a] >= 0 ? matmul(tan[n.a], n.b) : -1;
        int t2 = tan[n.b] >= 0 ? matmul(n.a, tan[n.b]) : -1;
        t = combine(t1, t2);
        break;
      }
      case Op::Add:
        t = combine(tan[n.a], tan[n.b]);
        break;
      case Op::Mul: {
        int t1 = tan[n.a] >= 0 ? mul(tan[n.a], n.b) : -1;
        int t2 = tan[n.b] >= 0 ? mul(n.a, tan[n.b]) : -1;
        t = combine(t1, t2);
        break;
      }
      case Op::Tanh: {
        if (tan[n.a] >= 0) {
          int sq = mul(i, i);
          int deriv = add(ones_like(n), scale(sq, -1.0));
          t = mul(deriv, tan[n.a]);
        }
        break;
      }
      case Op::Sigmoid: {
        if (tan[n.a] >= 0) {
          int om = add(ones_like(n), scale(i, -1.0));
          int deriv = mul(i, om);
          t = mul(deriv, tan[n.a]);
        }
        break;
      }
      case Op::Sum:
        if (tan[n.a] >= 0) t = sum(tan[n.a]);
        break;
      case Op::Scale:
        if (tan[n.a] >= 0) t = scale(tan[n.a], n.alpha);
        break;
      case Op::Concat: {
        if (tan[n.a] < 0 && tan[n.b] < 0) break;
        int ta = tan[n.a] >= 0 ? tan[n.a] : zeros_like(nodes_[n.a]);
        int tb = tan[n.b] >= 0 ? tan[n.b] : zeros_like(nodes_[n.b]);
        t = concat(ta, tb);
        break;
      }
      case Op::Slice:
        if (tan[n.a] >= 0) t = slice(tan[n.a], n.begin, n.rows);
        break;
    }
    tan[static_cast<std::size_t>(i)] = t;
  }
  return tan;
}

}  // namespace pfbr::ad
