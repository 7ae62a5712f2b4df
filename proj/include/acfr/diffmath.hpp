#pragma once

// Dense reverse-mode differentiation over rank-2 row-major matrices.
//
// A BasicGraph is a tape: every free function below evaluates its forward
// value eagerly and appends a node. backward() sweeps the tape in reverse and
// returns dLoss/dNode for every node. Vectors are represented as N x 1 or
// 1 x N matrices; "broadcast" always means repeating a 1 x m row over the
// leading (batch) dimension.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace acfr {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Op {
  kLeaf,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kTanh,
  kSigmoid,
  kRowSoftmax,
  kConcatCols,
  kReshape,
  kMean,
  kSquaredError,
  kTranspose,
  kGroupedDot,
  kGroupedMix,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kRowSoftmax: return "row_softmax";
    case Op::kConcatCols: return "concat";
    case Op::kReshape: return "reshape";
    case Op::kMean: return "mean";
    case Op::kSquaredError: return "squared_error";
    case Op::kTranspose: return "transpose";
    case Op::kGroupedDot: return "grouped_dot";
    case Op::kGroupedMix: return "grouped_mix";
  }
  return "?";
}

template <typename Scalar>
std::string shape_str(const MatrixX<Scalar>& m) {
  std::ostringstream os;
  os << '[' << m.rows() << 'x' << m.cols() << ']';
  return os.str();
}

template <typename Scalar>
class BasicGraph;

/// Handle to a node on a graph. Cheap to copy; valid as long as the graph.
template <typename Scalar>
class BasicVar {
 public:
  BasicVar() = default;
  BasicVar(BasicGraph<Scalar>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const MatrixX<Scalar>& value() const { return graph_->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  BasicGraph<Scalar>* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  BasicGraph<Scalar>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// dLoss/dNode for every node of the graph that produced it.
template <typename Scalar>
class BasicGradients {
 public:
  explicit BasicGradients(std::vector<MatrixX<Scalar>> grads) : grads_(std::move(grads)) {}

  const MatrixX<Scalar>& operator[](const BasicVar<Scalar>& v) const {
    if (v.id() >= grads_.size()) throw std::out_of_range("gradient requested for unknown node");
    return grads_[v.id()];
  }
  std::size_t size() const { return grads_.size(); }

 private:
  std::vector<MatrixX<Scalar>> grads_;
};

template <typename Scalar>
class BasicGraph {
 public:
  using Mat = MatrixX<Scalar>;
  using Var = BasicVar<Scalar>;

  struct Node {
    Op op = Op::kLeaf;
    std::array<std::size_t, 2> inputs{0, 0};
    int arity = 0;
    Scalar scalar = Scalar(0);  // scale factor
    Eigen::Index group = 0;     // tokens per sample for grouped ops
    Mat value;
  };

  BasicGraph() = default;
  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  Var leaf(Mat value) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(value);
    return push(std::move(n));
  }

  const Mat& value(const Var& v) const { return nodes_.at(v.id()).value; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  BasicGradients<Scalar> backward(const Var& loss) const;

 private:
  std::vector<Node> nodes_;
};

using Graph = BasicGraph<double>;
using Var = BasicVar<double>;
using Gradients = BasicGradients<double>;

namespace detail {

template <typename Scalar>
BasicGraph<Scalar>* same_graph(const char* op, const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(op) + ": uninitialized operand");
  if (a.graph() != b.graph()) throw std::invalid_argument(std::string(op) + ": operands on different graphs");
  return a.graph();
}

template <typename Scalar>
BasicGraph<Scalar>* graph_of(const char* op, const BasicVar<Scalar>& a) {
  if (!a.valid()) throw std::invalid_argument(std::string(op) + ": uninitialized operand");
  return a.graph();
}

template <typename Scalar>
[[noreturn]] void shape_mismatch(Op op, const MatrixX<Scalar>& a, const MatrixX<Scalar>& b) {
  throw ShapeError(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename Scalar>
BasicVar<Scalar> unary(Op op, const BasicVar<Scalar>& a, MatrixX<Scalar> value, Scalar scalar = Scalar(0),
                       Eigen::Index group = 0) {
  typename BasicGraph<Scalar>::Node n;
  n.op = op;
  n.inputs = {a.id(), 0};
  n.arity = 1;
  n.scalar = scalar;
  n.group = group;
  n.value = std::move(value);
  return graph_of(op_name(op), a)->push(std::move(n));
}

template <typename Scalar>
BasicVar<Scalar> binary(Op op, const BasicVar<Scalar>& a, const BasicVar<Scalar>& b, MatrixX<Scalar> value,
                        Eigen::Index group = 0) {
  typename BasicGraph<Scalar>::Node n;
  n.op = op;
  n.inputs = {a.id(), b.id()};
  n.arity = 2;
  n.group = group;
  n.value = std::move(value);
  return same_graph(op_name(op), a, b)->push(std::move(n));
}

template <typename Scalar>
MatrixX<Scalar> softmax_rows(const MatrixX<Scalar>& x) {
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mx = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicVar<Scalar> matmul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::same_graph("matmul", a, b);
  if (a.cols() != b.rows()) detail::shape_mismatch(Op::kMatMul, a.value(), b.value());
  return detail::binary(Op::kMatMul, a, b, MatrixX<Scalar>(a.value() * b.value()));
}

/// a + b where b has a's shape or is a 1 x cols row broadcast over a's rows.
template <typename Scalar>
BasicVar<Scalar> add(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::same_graph("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return detail::binary(Op::kAdd, a, b, MatrixX<Scalar>(av + bv));
  }
  if (bv.rows() == 1 && bv.cols() == av.cols()) {
    MatrixX<Scalar> out = av.rowwise() + bv.row(0);
    return detail::binary(Op::kAdd, a, b, std::move(out));
  }
  detail::shape_mismatch(Op::kAdd, av, bv);
}

template <typename Scalar>
BasicVar<Scalar> sub(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::same_graph("sub", a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch(Op::kSub, a.value(), b.value());
  return detail::binary(Op::kSub, a, b, MatrixX<Scalar>(a.value() - b.value()));
}

/// Elementwise product.
template <typename Scalar>
BasicVar<Scalar> mul(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::same_graph("mul", a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch(Op::kMul, a.value(), b.value());
  return detail::binary(Op::kMul, a, b, MatrixX<Scalar>(a.value().cwiseProduct(b.value())));
}

template <typename Scalar>
BasicVar<Scalar> scale(const BasicVar<Scalar>& a, Scalar s) {
  return detail::unary(Op::kScale, a, MatrixX<Scalar>(a.value() * s), s);
}

template <typename Scalar>
BasicVar<Scalar> relu(const BasicVar<Scalar>& a) {
  return detail::unary(Op::kRelu, a, MatrixX<Scalar>(a.value().cwiseMax(Scalar(0))));
}

template <typename Scalar>
BasicVar<Scalar> tanh(const BasicVar<Scalar>& a) {
  return detail::unary(Op::kTanh, a, MatrixX<Scalar>(a.value().array().tanh().matrix()));
}

template <typename Scalar>
BasicVar<Scalar> sigmoid(const BasicVar<Scalar>& a) {
  MatrixX<Scalar> out = a.value().unaryExpr([](Scalar v) {
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
  return detail::unary(Op::kSigmoid, a, std::move(out));
}

template <typename Scalar>
BasicVar<Scalar> row_softmax(const BasicVar<Scalar>& a) {
  if (a.cols() == 0) throw ShapeError("row_softmax: empty row " + shape_str(a.value()));
  return detail::unary(Op::kRowSoftmax, a, detail::softmax_rows(a.value()));
}

/// Concatenate along the last (column) dimension.
template <typename Scalar>
BasicVar<Scalar> concat(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::same_graph("concat", a, b);
  if (a.rows() != b.rows()) detail::shape_mismatch(Op::kConcatCols, a.value(), b.value());
  MatrixX<Scalar> out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  return detail::binary(Op::kConcatCols, a, b, std::move(out));
}

/// Row-major reinterpretation; element count must be preserved.
template <typename Scalar>
BasicVar<Scalar> reshape(const BasicVar<Scalar>& a, Eigen::Index rows, Eigen::Index cols) {
  const auto& av = a.value();
  if (rows < 0 || cols < 0 || rows * cols != av.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(av) + " as [" + std::to_string(rows) + "x" +
                     std::to_string(cols) + "]");
  }
  MatrixX<Scalar> out = Eigen::Map<const MatrixX<Scalar>>(av.data(), rows, cols);
  return detail::unary(Op::kReshape, a, std::move(out));
}

/// Mean over all entries, as a 1 x 1 node.
template <typename Scalar>
BasicVar<Scalar> mean(const BasicVar<Scalar>& a) {
  if (a.value().size() == 0) throw ShapeError("mean: empty input " + shape_str(a.value()));
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = a.value().mean();
  return detail::unary(Op::kMean, a, std::move(out));
}

/// mean((a - b)^2) over all entries, as a 1 x 1 node.
template <typename Scalar>
BasicVar<Scalar> squared_error(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) {
  detail::same_graph("squared_error", a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_mismatch(Op::kSquaredError, a.value(), b.value());
  if (a.value().size() == 0) throw ShapeError("squared_error: empty input " + shape_str(a.value()));
  MatrixX<Scalar> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / static_cast<Scalar>(a.value().size());
  return detail::binary(Op::kSquaredError, a, b, std::move(out));
}

template <typename Scalar>
BasicVar<Scalar> transpose(const BasicVar<Scalar>& a) {
  return detail::unary(Op::kTranspose, a, MatrixX<Scalar>(a.value().transpose()));
}

/// Per-sample dot products against a block of keys.
/// q is B x k, keys is (B*group) x k; out(i, j) = <q.row(i), keys.row(i*group + j)>.
template <typename Scalar>
BasicVar<Scalar> grouped_dot(const BasicVar<Scalar>& q, const BasicVar<Scalar>& keys, Eigen::Index group) {
  detail::same_graph("grouped_dot", q, keys);
  const auto& qv = q.value();
  const auto& kv = keys.value();
  if (group <= 0 || qv.cols() != kv.cols() || qv.rows() * group != kv.rows()) {
    detail::shape_mismatch(Op::kGroupedDot, qv, kv);
  }
  MatrixX<Scalar> out(qv.rows(), group);
  for (Eigen::Index i = 0; i < qv.rows(); ++i) {
    out.row(i) = (kv.middleRows(i * group, group) * qv.row(i).transpose()).transpose();
  }
  return detail::binary(Op::kGroupedDot, q, keys, std::move(out), group);
}

/// Per-sample weighted sum of a block of values.
/// weights is B x group, values is (B*group) x v; out.row(i) = sum_j weights(i,j) * values.row(i*group + j).
template <typename Scalar>
BasicVar<Scalar> grouped_mix(const BasicVar<Scalar>& weights, const BasicVar<Scalar>& values) {
  detail::same_graph("grouped_mix", weights, values);
  const auto& wv = weights.value();
  const auto& vv = values.value();
  const Eigen::Index group = wv.cols();
  if (group <= 0 || wv.rows() * group != vv.rows()) detail::shape_mismatch(Op::kGroupedMix, wv, vv);
  MatrixX<Scalar> out(wv.rows(), vv.cols());
  for (Eigen::Index i = 0; i < wv.rows(); ++i) {
    out.row(i) = wv.row(i) * vv.middleRows(i * group, group);
  }
  return detail::binary(Op::kGroupedMix, weights, values, std::move(out), group);
}

template <typename Scalar>
BasicVar<Scalar> operator+(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) { return add(a, b); }
template <typename Scalar>
BasicVar<Scalar> operator-(const BasicVar<Scalar>& a, const BasicVar<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
BasicVar<Scalar> operator*(Scalar s, const BasicVar<Scalar>& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Reverse sweep
// ---------------------------------------------------------------------------

template <typename Scalar>
BasicGradients<Scalar> BasicGraph<Scalar>::backward(const Var& loss) const {
  if (!loss.valid() || nodes_.empty()) throw std::logic_error("backward: no forward pass recorded");
  if (loss.graph() != this) throw std::invalid_argument("backward: loss belongs to a different graph");
  const Mat& lv = nodes_.at(loss.id()).value;
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(lv));

  std::vector<Mat> grads(nodes_.size());
  auto accumulate = [&](std::size_t id, const auto& g) {
    if (grads[id].size() == 0) {
      grads[id] = g;
    } else {
      grads[id] += g;
    }
  };
  grads[loss.id()] = Mat::Ones(1, 1);

  for (std::size_t k = loss.id() + 1; k-- > 0;) {
    const Node& n = nodes_[k];
    if (n.op == Op::kLeaf || grads[k].size() == 0) continue;
    const Mat& g = grads[k];
    const Mat& a = nodes_[n.inputs[0]].value;
    const std::size_t ia = n.inputs[0];
    const std::size_t ib = n.inputs[1];

    switch (n.op) {
      case Op::kMatMul: {
        const Mat& b = nodes_[ib].value;
        accumulate(ia, Mat(g * b.transpose()));
        accumulate(ib, Mat(a.transpose() * g));
        break;
      }
      case Op::kAdd: {
        const Mat& b = nodes_[ib].value;
        accumulate(ia, g);
        if (b.rows() == a.rows()) {
          accumulate(ib, g);
        } else {
          accumulate(ib, Mat(g.colwise().sum()));
        }
        break;
      }
      case Op::kSub:
        accumulate(ia, g);
        accumulate(ib, Mat(-g));
        break;
      case Op::kMul: {
        const Mat& b = nodes_[ib].value;
        accumulate(ia, Mat(g.cwiseProduct(b)));
        accumulate(ib, Mat(g.cwiseProduct(a)));
        break;
      }
      case Op::kScale:
        accumulate(ia, Mat(g * n.scalar));
        break;
      case Op::kRelu:
        accumulate(ia, Mat((a.array() > Scalar(0)).select(g.array(), Scalar(0))));
        break;
      case Op::kTanh:
        accumulate(ia, Mat(g.array() * (Scalar(1) - n.value.array().square())));
        break;
      case Op::kSigmoid:
        accumulate(ia, Mat(g.array() * n.value.array() * (Scalar(1) - n.value.array())));
        break;
      case Op::kRowSoftmax: {
        // s * (g - <g, s>) per row
        const Mat& s = n.value;
        const VectorX<Scalar> inner = g.cwiseProduct(s).rowwise().sum();
        Mat da = s.array() * (g.colwise() - inner).array();
        accumulate(ia, da);
        break;
      }
      case Op::kConcatCols: {
        const Mat& b = nodes_[ib].value;
        accumulate(ia, Mat(g.leftCols(a.cols())));
        accumulate(ib, Mat(g.rightCols(b.cols())));
        break;
      }
      case Op::kReshape: {
        Mat da = Eigen::Map<const Mat>(g.data(), a.rows(), a.cols());
        accumulate(ia, da);
        break;
      }
      case Op::kMean:
        accumulate(ia, Mat::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<Scalar>(a.size())));
        break;
      case Op::kSquaredError: {
        const Mat& b = nodes_[ib].value;
        const Mat d = (a - b) * (Scalar(2) * g(0, 0) / static_cast<Scalar>(a.size()));
        accumulate(ia, d);
        accumulate(ib, Mat(-d));
        break;
      }
      case Op::kTranspose:
        accumulate(ia, Mat(g.transpose()));
        break;
      case Op::kGroupedDot: {
        const Mat& keys = nodes_[ib].value;
        const Eigen::Index group = n.group;
        Mat dq(a.rows(), a.cols());
        Mat dk(keys.rows(), keys.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          dq.row(i) = g.row(i) * keys.middleRows(i * group, group);
          dk.middleRows(i * group, group) = g.row(i).transpose() * a.row(i);
        }
        accumulate(ia, dq);
        accumulate(ib, dk);
        break;
      }
      case Op::kGroupedMix: {
        const Mat& values = nodes_[ib].value;
        const Eigen::Index group = n.group;
        Mat dw(a.rows(), a.cols());
        Mat dv(values.rows(), values.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          dw.row(i) = (values.middleRows(i * group, group) * g.row(i).transpose()).transpose();
          dv.middleRows(i * group, group) = a.row(i).transpose() * g.row(i);
        }
        accumulate(ia, dw);
        accumulate(ib, dv);
        break;
      }
      case Op::kLeaf:
        break;
    }
  }

  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (grads[k].size() == 0) grads[k] = Mat::Zero(nodes_[k].value.rows(), nodes_[k].value.cols());
  }
  return BasicGradients<Scalar>(std::move(grads));
}

// ---------------------------------------------------------------------------
// Finite-difference check
// ---------------------------------------------------------------------------

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
///
/// `build(graph, x)` must record a scalar function of the leaf `x` on `graph`
/// and return its output node. It is called once for the analytic gradient
/// and twice per coordinate of `x` for the central differences.
template <typename Scalar, typename Build>
Scalar grad_check(Build&& build, const MatrixX<Scalar>& x, Scalar step) {
  if (!(step > Scalar(0))) throw std::invalid_argument("grad_check: step must be positive");

  auto evaluate = [&](const MatrixX<Scalar>& at) {
    BasicGraph<Scalar> g;
    const BasicVar<Scalar> out = build(g, g.leaf(at));
    if (out.rows() != 1 || out.cols() != 1) throw ShapeError("grad_check: function is not scalar");
    const Scalar v = out.value()(0, 0);
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite function value at probe");
    return v;
  };

  BasicGraph<Scalar> g;
  const BasicVar<Scalar> xv = g.leaf(x);
  const BasicVar<Scalar> out = build(g, xv);
  if (!std::isfinite(out.value()(0, 0))) throw NumericalError("grad_check: non-finite function value");
  const MatrixX<Scalar> analytic = g.backward(out)[xv];

  Scalar worst = Scalar(0);
  MatrixX<Scalar> probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const Scalar fp = evaluate(probe);
    probe.data()[i] = orig - step;
    const Scalar fm = evaluate(probe);
    probe.data()[i] = orig;
    const Scalar numeric = (fp - fm) / (Scalar(2) * step);
    const Scalar a = analytic.data()[i];
    const Scalar err = std::abs(a - numeric) / std::max(Scalar(1), std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace acfr
