#include "rlvo/autodiff.hpp"

#include <cmath>
#include <string>

#include "rlvo/errors.hpp"

namespace rlvo::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: ") + what);
}

Matrix softmax_of_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Tape* same_tape(const Var& a, const Var& b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), "operands recorded on different tapes");
  return a.tape();
}

}  // namespace

const Matrix& Var::value() const { return tape_->node(*this).val(); }
const Matrix& Var::grad() const {
  const Tape::Node& n = tape_->node(*this);
  return n.op == Op::Parameter && n.sink ? *n.sink : n.grad;
}

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "scalar() on a non 1x1 node");
  return v(0, 0);
}

const Tape::Node& Tape::node(const Var& v) const {
  check(v);
  return nodes_[static_cast<std::size_t>(v.id_)];
}

void Tape::check(const Var& v) const {
  require(v.tape_ == this && v.id_ >= 0 && static_cast<std::size_t>(v.id_) < nodes_.size(),
          "variable does not belong to this tape");
}

Var Tape::push(Node node) {
  for (int in : node.inputs) {
    if (in >= 0 && nodes_[static_cast<std::size_t>(in)].requires_grad) node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(const Matrix& value, Matrix* grad_sink) {
  if (grad_sink) require(grad_sink->rows() == value.rows() && grad_sink->cols() == value.cols(),
                         "gradient sink shape differs from parameter");
  Node n;
  n.op = Op::Parameter;
  n.external = &value;
  n.sink = grad_sink;
  n.requires_grad = grad_sink != nullptr;
  return push(std::move(n));
}

Var matmul(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  require(a.cols() == b.rows(), "matmul shape mismatch");
  Tape::Node n;
  n.op = Op::MatMul;
  n.value = a.value() * b.value();
  n.inputs = {a.id(), b.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var add(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
  Tape::Node n;
  n.op = Op::Add;
  n.value = a.value() + b.value();
  n.inputs = {a.id(), b.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var sub(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
  Tape::Node n;
  n.op = Op::Sub;
  n.value = a.value() - b.value();
  n.inputs = {a.id(), b.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var mul(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
  Tape::Node n;
  n.op = Op::Mul;
  n.value = a.value().cwiseProduct(b.value());
  n.inputs = {a.id(), b.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var scale(const Var& a, double c) {
  Tape::Node n;
  n.op = Op::Scale;
  n.value = c * a.value();
  n.a = c;
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var add_scalar(const Var& a, double c) {
  Tape::Node n;
  n.op = Op::AddScalar;
  n.value = a.value().array() + c;
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var add_row_broadcast(const Var& a, const Var& row) {
  Tape* t = same_tape(a, row);
  require(row.rows() == 1 && row.cols() == a.cols(), "row broadcast shape mismatch");
  Tape::Node n;
  n.op = Op::AddRowBroadcast;
  n.value = a.value().rowwise() + row.value().row(0);
  n.inputs = {a.id(), row.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var relu(const Var& a) {
  Tape::Node n;
  n.op = Op::Relu;
  n.value = a.value().cwiseMax(0.0);
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var exp(const Var& a) {
  Tape::Node n;
  n.op = Op::Exp;
  n.value = a.value().array().exp();
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var square(const Var& a) {
  Tape::Node n;
  n.op = Op::Square;
  n.value = a.value().array().square();
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var softmax_rows(const Var& a) {
  Tape::Node n;
  n.op = Op::SoftmaxRows;
  n.value = softmax_of_rows(a.value());
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var log_softmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Tape::Node n;
  n.op = Op::LogSoftmaxRows;
  n.value.resize(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    n.value.row(r) = x.row(r).array() - lse;
  }
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var sum(const Var& a) {
  Tape::Node n;
  n.op = Op::Sum;
  n.value = Matrix::Constant(1, 1, a.value().sum());
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean of an empty matrix");
  Tape::Node n;
  n.op = Op::Mean;
  n.value = Matrix::Constant(1, 1, a.value().mean());
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var concat_cols(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows(), "concat_cols row mismatch");
  Tape::Node n;
  n.op = Op::ConcatCols;
  n.value.resize(a.rows(), a.cols() + b.cols());
  n.value << a.value(), b.value();
  n.inputs = {a.id(), b.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var flatten(const Var& a) {
  const Matrix& x = a.value();
  Tape::Node n;
  n.op = Op::Flatten;
  n.value.resize(1, x.size());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) n.value(0, r * x.cols() + c) = x(r, c);
  n.i = x.rows();
  n.j = x.cols();
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var pick(const Var& a, Eigen::Index row, Eigen::Index col) {
  if (row < 0 || col < 0 || row >= a.rows() || col >= a.cols()) {
    throw IndexOutOfRange("pick(" + std::to_string(row) + ", " + std::to_string(col) +
                          ") outside a " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " matrix");
  }
  Tape::Node n;
  n.op = Op::Pick;
  n.value = Matrix::Constant(1, 1, a.value()(row, col));
  n.i = row;
  n.j = col;
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var clip(const Var& a, double lo, double hi) {
  Tape::Node n;
  n.op = Op::Clip;
  n.value = a.value().cwiseMax(lo).cwiseMin(hi);
  n.a = lo;
  n.b = hi;
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

Var minimum(const Var& a, const Var& b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "minimum shape mismatch");
  Tape::Node n;
  n.op = Op::Minimum;
  n.value = a.value().cwiseMin(b.value());
  n.inputs = {a.id(), b.id(), -1, -1, -1};
  return t->push(std::move(n));
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  Tape* t = same_tape(q, k);
  same_tape(q, v);
  require(heads > 0 && q.cols() % heads == 0, "attention: width not divisible by heads");
  require(k.cols() == q.cols() && v.cols() == q.cols() && k.rows() == v.rows(),
          "attention: shape mismatch");
  const Eigen::Index m = q.rows();
  const Eigen::Index n_keys = k.rows();
  const Eigen::Index dh = q.cols() / heads;
  const double c = 1.0 / std::sqrt(static_cast<double>(dh));

  Tape::Node node;
  node.op = Op::Attention;
  node.value = Matrix::Zero(m, q.cols());
  node.aux.resize(m, n_keys * heads);
  node.a = c;
  node.i = heads;
  if (n_keys > 0) {
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.value().middleCols(h * dh, dh);
      const auto kh = k.value().middleCols(h * dh, dh);
      const auto vh = v.value().middleCols(h * dh, dh);
      const Matrix weights = softmax_of_rows(c * (qh * kh.transpose()));
      node.aux.middleCols(h * n_keys, n_keys) = weights;
      node.value.middleCols(h * dh, dh) = weights * vh;
    }
  }
  node.inputs = {q.id(), k.id(), v.id(), -1, -1};
  return t->push(std::move(node));
}

Var projected_attention(const Var& q, const Var& x, const Var& wk, const Var& wv, const Var& bv,
                        int heads) {
  Tape* t = same_tape(q, x);
  same_tape(q, wk);
  same_tape(q, wv);
  same_tape(q, bv);
  const Eigen::Index d = q.cols();
  require(heads > 0 && d % heads == 0, "projected_attention: width not divisible by heads");
  require(wk.rows() == x.cols() && wv.rows() == x.cols() && wk.cols() == d && wv.cols() == d &&
              bv.rows() == 1 && bv.cols() == d,
          "projected_attention: shape mismatch");
  const Eigen::Index m = q.rows();
  const Eigen::Index n_keys = x.rows();
  const Eigen::Index dh = d / heads;
  const double c = 1.0 / std::sqrt(static_cast<double>(dh));

  Tape::Node node;
  node.op = Op::ProjectedAttention;
  node.value = Matrix::Zero(m, d);
  // Attention weights stored transposed (N x M per head) so that the softmax
  // runs over contiguous columns.
  node.aux.resize(n_keys, m * heads);
  node.a = c;
  node.i = heads;
  if (n_keys > 0) {
    const Matrix& xv = x.value();
    for (int h = 0; h < heads; ++h) {
      const Matrix folded = q.value().middleCols(h * dh, dh) * wk.value().middleCols(h * dh, dh).transpose();
      Matrix wt = c * xv.lazyProduct(folded.transpose());  // N x M
      wt.rowwise() -= wt.colwise().maxCoeff();
      wt = wt.array().exp().matrix();
      wt.array().rowwise() /= wt.colwise().sum().array();
      node.value.middleCols(h * dh, dh) =
          (Matrix(wt.transpose().lazyProduct(xv)) * wv.value().middleCols(h * dh, dh)).rowwise() +
          bv.value().middleCols(h * dh, dh).row(0);
      node.aux.middleCols(h * m, m) = wt;
    }
  }
  node.inputs = {q.id(), x.id(), wk.id(), wv.id(), bv.id()};
  return t->push(std::move(node));
}

Var argmax_rows(const Var& a) {
  const Matrix& x = a.value();
  Tape::Node n;
  n.op = Op::ArgmaxRows;
  n.value.resize(x.rows(), 1);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Index idx = 0;
    x.row(r).maxCoeff(&idx);
    n.value(r, 0) = static_cast<double>(idx);
  }
  n.inputs = {a.id(), -1, -1, -1, -1};
  return a.tape()->push(std::move(n));
}

void Tape::backward(const Var& loss) {
  check(loss);
  require(loss.rows() == 1 && loss.cols() == 1, "backward() needs a scalar loss");
  const auto last = static_cast<std::size_t>(loss.id_);
  for (std::size_t k = 0; k <= last; ++k) {
    Node& n = nodes_[k];
    // Parameter leaves accumulate straight into their sinks.
    if (n.requires_grad && n.op != Op::Parameter) n.grad = Matrix::Zero(n.val().rows(), n.val().cols());
  }
  if (!nodes_[last].requires_grad) return;
  if (nodes_[last].op == Op::Parameter) {
    (*nodes_[last].sink)(0, 0) += 1.0;
    return;
  }
  nodes_[last].grad(0, 0) = 1.0;

  // Only nodes on a path to the loss are visited.
  std::vector<bool> reached(last + 1, false);
  reached[last] = true;

  auto wants = [&](int id) { return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad; };
  auto grad_of = [&](int id) -> Matrix& {
    Node& target = nodes_[static_cast<std::size_t>(id)];
    return target.op == Op::Parameter ? *target.sink : target.grad;
  };
  auto value_of = [&](int id) -> const Matrix& { return nodes_[static_cast<std::size_t>(id)].val(); };

  for (std::size_t k = last + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (!n.requires_grad || !reached[k]) continue;
    for (int in : n.inputs) {
      if (in >= 0) reached[static_cast<std::size_t>(in)] = true;
    }
    const Matrix& g = n.grad;
    const int x = n.inputs[0];
    const int y = n.inputs[1];
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Parameter:
        break;
      case Op::MatMul:
        if (wants(x)) grad_of(x).noalias() += g * value_of(y).transpose();
        if (wants(y)) {
          const Matrix& a = value_of(x);
          if (a.rows() == 1) {
            // Row-vector input: an outer product, cheaper than a general product.
            grad_of(y).noalias() += a.row(0).transpose() * g.row(0);
          } else {
            grad_of(y).noalias() += a.transpose() * g;
          }
        }
        break;
      case Op::Add:
        if (wants(x)) grad_of(x) += g;
        if (wants(y)) grad_of(y) += g;
        break;
      case Op::Sub:
        if (wants(x)) grad_of(x) += g;
        if (wants(y)) grad_of(y) -= g;
        break;
      case Op::Mul:
        if (wants(x)) grad_of(x) += g.cwiseProduct(value_of(y));
        if (wants(y)) grad_of(y) += g.cwiseProduct(value_of(x));
        break;
      case Op::Scale:
        if (wants(x)) grad_of(x) += n.a * g;
        break;
      case Op::AddScalar:
        if (wants(x)) grad_of(x) += g;
        break;
      case Op::AddRowBroadcast:
        if (wants(x)) grad_of(x) += g;
        if (wants(y)) grad_of(y) += g.colwise().sum();
        break;
      case Op::Relu:
        if (wants(x)) grad_of(x).array() += (value_of(x).array() > 0.0).select(g.array(), 0.0);
        break;
      case Op::Exp:
        if (wants(x)) grad_of(x) += g.cwiseProduct(n.value);
        break;
      case Op::Square:
        if (wants(x)) grad_of(x) += 2.0 * g.cwiseProduct(value_of(x));
        break;
      case Op::SoftmaxRows:
        if (wants(x)) {
          const Matrix& s = n.value;
          const Eigen::VectorXd dot = (g.cwiseProduct(s)).rowwise().sum();
          grad_of(x) += s.cwiseProduct(g.colwise() - dot);
        }
        break;
      case Op::LogSoftmaxRows:
        if (wants(x)) {
          const Matrix s = n.value.array().exp();
          const Eigen::VectorXd total = g.rowwise().sum();
          grad_of(x) += g - s.cwiseProduct(total.replicate(1, s.cols()));
        }
        break;
      case Op::Sum:
        if (wants(x)) grad_of(x).array() += g(0, 0);
        break;
      case Op::Mean:
        if (wants(x)) grad_of(x).array() += g(0, 0) / static_cast<double>(value_of(x).size());
        break;
      case Op::ConcatCols:
        if (wants(x)) grad_of(x) += g.leftCols(value_of(x).cols());
        if (wants(y)) grad_of(y) += g.rightCols(value_of(y).cols());
        break;
      case Op::Flatten:
        if (wants(x)) {
          Matrix& gx = grad_of(x);
          for (Eigen::Index r = 0; r < n.i; ++r)
            for (Eigen::Index c = 0; c < n.j; ++c) gx(r, c) += g(0, r * n.j + c);
        }
        break;
      case Op::Pick:
        if (wants(x)) grad_of(x)(n.i, n.j) += g(0, 0);
        break;
      case Op::Clip:
        if (wants(x)) {
          const auto& v = value_of(x).array();
          grad_of(x).array() += ((v > n.a) && (v < n.b)).select(g.array(), 0.0);
        }
        break;
      case Op::Minimum:
        if (wants(x) || wants(y)) {
          const auto first = (value_of(x).array() <= value_of(y).array());
          if (wants(x)) grad_of(x).array() += first.select(g.array(), 0.0);
          if (wants(y)) grad_of(y).array() += first.select(0.0, g.array());
        }
        break;
      case Op::Attention: {
        const int z = n.inputs[2];
        const Matrix& q = value_of(x);
        const Matrix& kk = value_of(y);
        const Matrix& vv = value_of(z);
        const Eigen::Index n_keys = kk.rows();
        if (n_keys == 0) break;
        const auto heads = static_cast<int>(n.i);
        const Eigen::Index dh = q.cols() / heads;
        for (int h = 0; h < heads; ++h) {
          const auto w = n.aux.middleCols(h * n_keys, n_keys);  // M x N
          const auto gh = g.middleCols(h * dh, dh);  // M x dh
          if (wants(z)) grad_of(z).middleCols(h * dh, dh).noalias() += w.transpose() * gh;
          if (wants(x) || wants(y)) {
            const Matrix dw = gh * vv.middleCols(h * dh, dh).transpose();  // M x N
            const Eigen::VectorXd dot = dw.cwiseProduct(w).rowwise().sum();
            const Matrix ds = n.a * w.cwiseProduct(dw.colwise() - dot);
            if (wants(x)) grad_of(x).middleCols(h * dh, dh).noalias() += ds * kk.middleCols(h * dh, dh);
            if (wants(y)) grad_of(y).middleCols(h * dh, dh).noalias() += ds.transpose() * q.middleCols(h * dh, dh);
          }
        }
        break;
      }
      case Op::ProjectedAttention: {
        const Matrix& q = value_of(x);
        const Matrix& xv = value_of(y);
        const int wk_id = n.inputs[2];
        const int wv_id = n.inputs[3];
        const int bv_id = n.inputs[4];
        const Matrix& wk = value_of(wk_id);
        const Matrix& wv = value_of(wv_id);
        const Eigen::Index n_keys = xv.rows();
        if (n_keys == 0) break;
        const auto heads = static_cast<int>(n.i);
        const Eigen::Index m = q.rows();
        const Eigen::Index dh = q.cols() / heads;
        for (int h = 0; h < heads; ++h) {
          const auto wt = n.aux.middleCols(h * m, m);  // N x M
          const auto gh = g.middleCols(h * dh, dh);  // M x dh
          const auto wk_h = wk.middleCols(h * dh, dh);  // 3 x dh
          const auto wv_h = wv.middleCols(h * dh, dh);
          if (wants(bv_id)) grad_of(bv_id).middleCols(h * dh, dh) += gh.colwise().sum();
          if (wants(wv_id)) grad_of(wv_id).middleCols(h * dh, dh).noalias() += Matrix(xv.transpose().lazyProduct(wt)) * gh;
          const Matrix gv = gh * wv_h.transpose();  // M x 3; the bias part cancels in the softmax
          Matrix dz = xv.lazyProduct(gv.transpose());  // N x M, gradient w.r.t. the weights
          const Eigen::RowVectorXd dot = dz.cwiseProduct(wt).colwise().sum();
          dz.rowwise() -= dot;
          dz = n.a * wt.cwiseProduct(dz);  // gradient w.r.t. the pre-softmax scores
          const Matrix d_folded = dz.transpose().lazyProduct(xv);  // M x 3
          if (wants(x)) grad_of(x).middleCols(h * dh, dh).noalias() += d_folded * wk_h;
          if (wants(wk_id)) {
            grad_of(wk_id).middleCols(h * dh, dh).noalias() += d_folded.transpose() * q.middleCols(h * dh, dh);
          }
          if (wants(y)) {
            const Matrix folded = q.middleCols(h * dh, dh) * wk_h.transpose();  // M x 3
            grad_of(y).noalias() += dz.lazyProduct(folded) + wt.lazyProduct(gv);
          }
        }
        break;
      }
      case Op::ArgmaxRows:
        throw UnsupportedPrimitive("gradient requested through argmax_rows");
    }
  }
}

}  // namespace rlvo::ad
