#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <vector>

// Matrix-valued reverse-mode differentiation. A Tape records one forward
// evaluation; backward() walks it in reverse and accumulates gradients into
// the sinks registered for parameter leaves.
namespace rlvo::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

enum class Op {
  Constant,
  Parameter,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddScalar,
  AddRowBroadcast,
  Relu,
  Exp,
  Square,
  SoftmaxRows,
  LogSoftmaxRows,
  Sum,
  Mean,
  ConcatCols,
  Flatten,
  Pick,
  Clip,
  Minimum,
  Attention,
  ProjectedAttention,
  ArgmaxRows,  // non-differentiable
};

class Tape {
 public:
  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf referencing `value` without copying; `value` must outlive the tape.
  // Gradients are added into *grad_sink (same shape) on backward; a null sink
  // makes the leaf a constant for differentiation purposes.
  Var parameter(const Matrix& value, Matrix* grad_sink);

  // Seeds d(loss)/d(loss) = 1 and accumulates into every reachable sink.
  // Throws UnsupportedPrimitive if the gradient must flow through a
  // non-differentiable node.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  friend Var matmul(const Var&, const Var&);
  friend Var add(const Var&, const Var&);
  friend Var sub(const Var&, const Var&);
  friend Var mul(const Var&, const Var&);
  friend Var scale(const Var&, double);
  friend Var add_scalar(const Var&, double);
  friend Var add_row_broadcast(const Var&, const Var&);
  friend Var relu(const Var&);
  friend Var exp(const Var&);
  friend Var square(const Var&);
  friend Var softmax_rows(const Var&);
  friend Var log_softmax_rows(const Var&);
  friend Var sum(const Var&);
  friend Var mean(const Var&);
  friend Var concat_cols(const Var&, const Var&);
  friend Var flatten(const Var&);
  friend Var pick(const Var&, Eigen::Index, Eigen::Index);
  friend Var clip(const Var&, double, double);
  friend Var minimum(const Var&, const Var&);
  friend Var attention(const Var&, const Var&, const Var&, int);
  friend Var projected_attention(const Var&, const Var&, const Var&, const Var&, const Var&, int);
  friend Var argmax_rows(const Var&);

  struct Node {
    Op op = Op::Constant;
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    std::array<int, 5> inputs{-1, -1, -1, -1, -1};
    double a = 0.0;  // op-specific scalars
    double b = 0.0;
    Eigen::Index i = 0;
    Eigen::Index j = 0;
    Matrix aux;  // op-specific cache (e.g. attention weights)
    Matrix* sink = nullptr;
    bool requires_grad = false;

    const Matrix& val() const { return external ? *external : value; }
  };

  Var push(Node node);
  const Node& node(const Var& v) const;
  void check(const Var& v) const;

  std::vector<Node> nodes_;
};

// Row-vector convention throughout: a linear layer is add_row_broadcast(matmul(x, W), b).
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
// a (R x C) + row (1 x C) added to every row.
Var add_row_broadcast(const Var& a, const Var& row);
Var relu(const Var& a);  // subgradient 0 at 0
Var exp(const Var& a);
Var square(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var sum(const Var& a);  // 1x1
Var mean(const Var& a);  // 1x1
Var concat_cols(const Var& a, const Var& b);
// Row-major flatten into 1 x (rows * cols).
Var flatten(const Var& a);
Var pick(const Var& a, Eigen::Index row, Eigen::Index col);  // 1x1
// Elementwise clamp; gradient passes only strictly inside (lo, hi).
Var clip(const Var& a, double lo, double hi);
// Elementwise min; ties route the gradient to the first argument.
Var minimum(const Var& a, const Var& b);
// Multi-head scaled dot-product attention. q: M x D, k and v: N x D, D
// divisible by heads. Each head attends with softmax(q_h k_h^T / sqrt(D/heads)).
// With N = 0 the context is defined as zeros (M x D).
Var attention(const Var& q, const Var& k, const Var& v, int heads);
// attention(q, x wk + b_k, x wv + bv, heads) for inputs x (N x 3) without
// forming the N x D keys and values: per head the key projection is folded
// into the queries and the value projection is applied after pooling. Any key
// bias b_k shifts each query's scores uniformly and cancels in the softmax, so
// it has no argument. With N = 0 the context is zeros.
Var projected_attention(const Var& q, const Var& x, const Var& wk, const Var& wv, const Var& bv,
                        int heads);
// Column index of the row maximum, as a (rows x 1) matrix of doubles.
Var argmax_rows(const Var& a);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }

}  // namespace rlvo::ad
