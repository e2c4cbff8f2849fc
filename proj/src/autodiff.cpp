#include "tgpssm/autodiff.hpp"

#include <cmath>

#include "tgpssm/param_store.hpp"

namespace tgpssm::ad {

namespace {

double softplus_stable(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Lower triangle with halved diagonal; used by the Cholesky pullback.
Matrix phi(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

}  // namespace

const Matrix& Var::val() const { return tape->val(*this); }
double Var::scalar() const { return tape->scalar(*this); }
int Var::rows() const { return static_cast<int>(val().rows()); }
int Var::cols() const { return static_cast<int>(val().cols()); }

Var Tape::push(Node&& n) {
  if (check_finite_ && !n.value.allFinite()) {
    throw NumericError("non-finite value in forward pass" +
                       (n.label.empty() ? std::string()
                                        : " at node '" + n.label + "'"));
  }
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Matrix& v, std::string label) {
  Node n;
  n.op = Op::kLeaf;
  n.value = v;
  n.label = std::move(label);
  return push(std::move(n));
}

Var Tape::leaf(double s, std::string label) {
  return leaf(Matrix::Constant(1, 1, s), std::move(label));
}

Var Tape::constant(const Matrix& v) {
  Node n;
  n.op = Op::kConstant;
  n.value = v;
  return push(std::move(n));
}

Var Tape::constant(double s) { return constant(Matrix::Constant(1, 1, s)); }

double Tape::scalar(Var v) const {
  const Matrix& m = nodes_[v.idx].value;
  check_arg(m.rows() == 1 && m.cols() == 1, "scalar(): node is not 1x1");
  return m(0, 0);
}

Matrix& Tape::adj(int i) {
  Node& n = nodes_[i];
  if (!n.touched) {
    n.adjoint = Matrix::Zero(n.value.rows(), n.value.cols());
    n.touched = true;
  }
  return n.adjoint;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.idx];
  if (!n.touched) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.adjoint;
}

void Tape::backward(Var f) {
  check_arg(f.tape == this, "backward(): node from another tape");
  check_arg(nodes_[f.idx].value.size() == 1, "backward(): output is not 1x1");
  for (Node& n : nodes_) {
    n.touched = false;
    n.adjoint.resize(0, 0);
  }
  adj(f.idx)(0, 0) = 1.0;
  for (int i = f.idx; i >= 0; --i) {
    if (nodes_[i].touched) backward_node(i);
  }
}

void Tape::backward_node(int i) {
  Node& n = nodes_[i];
  const Matrix& g = n.adjoint;
  auto in_val = [&](int k) -> const Matrix& { return nodes_[n.in[k]].value; };
  auto in_adj = [&](int k) -> Matrix& { return adj(n.in[k]); };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      break;
    case Op::kAdd:
      in_adj(0) += g;
      in_adj(1) += g;
      break;
    case Op::kSub:
      in_adj(0) += g;
      in_adj(1) -= g;
      break;
    case Op::kMul:
      in_adj(0) += g.cwiseProduct(in_val(1));
      in_adj(1) += g.cwiseProduct(in_val(0));
      break;
    case Op::kDiv:
      in_adj(0) += g.cwiseQuotient(in_val(1));
      in_adj(1) -= g.cwiseProduct(in_val(0))
                       .cwiseQuotient(in_val(1).cwiseProduct(in_val(1)));
      break;
    case Op::kScalarMul:
      in_adj(0)(0, 0) += g.cwiseProduct(in_val(1)).sum();
      in_adj(1) += in_val(0)(0, 0) * g;
      break;
    case Op::kScalarAdd:
      in_adj(0)(0, 0) += g.sum();
      in_adj(1) += g;
      break;
    case Op::kMulConst:
      in_adj(0) += n.cdata * g;
      break;
    case Op::kAddConst:
      in_adj(0) += g;
      break;
    case Op::kMatMul:
      in_adj(0) += g * in_val(1).transpose();
      in_adj(1) += in_val(0).transpose() * g;
      break;
    case Op::kTranspose:
      in_adj(0) += g.transpose();
      break;
    case Op::kSumAll:
      in_adj(0).array() += g(0, 0);
      break;
    case Op::kTrace:
      in_adj(0).diagonal().array() += g(0, 0);
      break;
    case Op::kBlock:
      in_adj(0).block(n.i0, n.j0, n.br, n.bc) += g;
      break;
    case Op::kConcatV:
      in_adj(0) += g.topRows(in_val(0).rows());
      in_adj(1) += g.bottomRows(in_val(1).rows());
      break;
    case Op::kExp:
      in_adj(0) += g.cwiseProduct(n.value);
      break;
    case Op::kLog:
      in_adj(0) += g.cwiseQuotient(in_val(0));
      break;
    case Op::kTanh:
      in_adj(0) +=
          g.cwiseProduct(Matrix::Ones(n.value.rows(), n.value.cols()) -
                         n.value.cwiseProduct(n.value));
      break;
    case Op::kSinh:
      in_adj(0) += g.cwiseProduct(in_val(0).array().cosh().matrix());
      break;
    case Op::kAsinh:
      in_adj(0) += g.cwiseQuotient(
          (in_val(0).array().square() + 1.0).sqrt().matrix());
      break;
    case Op::kSoftplus:
      in_adj(0) += g.cwiseProduct(
          in_val(0).unaryExpr([](double x) { return sigmoid_stable(x); }));
      break;
    case Op::kSqrt:
      in_adj(0) += (0.5 * g).cwiseQuotient(n.value);
      break;
    case Op::kSquare:
      in_adj(0) += 2.0 * g.cwiseProduct(in_val(0));
      break;
    case Op::kAbs:
      in_adj(0) += g.cwiseProduct(
          in_val(0).unaryExpr([](double x) { return x < 0.0 ? -1.0 : 1.0; }));
      break;
    case Op::kSign:
      break;
    case Op::kCholesky: {
      // dg = <M, dSigma> with M = L^-T phi(L^T Lbar) L^-1; Eigen's LLT reads
      // only the lower triangle, so route the symmetric adjoint there.
      const Matrix& l = n.value;
      Matrix gl = g.triangularView<Eigen::Lower>();
      Matrix p = phi(l.transpose() * gl);
      Matrix y = l.transpose().triangularView<Eigen::Upper>().solve(p);
      Matrix m =
          l.transpose().triangularView<Eigen::Upper>().solve(y.transpose());
      m.transposeInPlace();  // m = L^-T phi L^-1
      Matrix contrib = m + m.transpose();
      contrib.diagonal() = m.diagonal();
      in_adj(0) += contrib.triangularView<Eigen::Lower>();
      break;
    }
    case Op::kSolveTriL: {
      const Matrix& l = in_val(0);
      Matrix gb = l.transpose().triangularView<Eigen::Upper>().solve(g);
      in_adj(1) += gb;
      Matrix gl = -gb * n.value.transpose();
      in_adj(0) += gl.triangularView<Eigen::Lower>();
      break;
    }
    case Op::kSolveTriLT: {
      const Matrix& l = in_val(0);
      Matrix gb = l.triangularView<Eigen::Lower>().solve(g);
      in_adj(1) += gb;
      Matrix gl = -n.value * gb.transpose();
      in_adj(0) += gl.triangularView<Eigen::Lower>();
      break;
    }
    case Op::kDiagv: {
      Matrix& a = in_adj(0);
      for (int k = 0; k < g.rows(); ++k) a(k, k) += g(k, 0);
      break;
    }
    case Op::kTrilSoftplusDiag: {
      Matrix contrib = g.triangularView<Eigen::StrictlyLower>();
      for (int k = 0; k < g.rows(); ++k)
        contrib(k, k) = g(k, k) * sigmoid_stable(in_val(0)(k, k));
      in_adj(0) += contrib;
      break;
    }
    case Op::kSeKernel: {
      const Matrix& a = in_val(0);
      const Matrix& b = in_val(1);
      const Matrix& log_ell = in_val(2);
      const int d = static_cast<int>(a.cols());
      Matrix w = g.cwiseProduct(n.value);
      Vector r = w.rowwise().sum();
      Vector c = w.colwise().sum().transpose();
      Matrix& ga = in_adj(0);
      Matrix& gb = in_adj(1);
      Matrix& gell = in_adj(2);
      for (int k = 0; k < d; ++k) {
        double ell2 = std::exp(2.0 * log_ell(k, 0));
        Vector ak = a.col(k);
        Vector bk = b.col(k);
        Vector wb = w * bk;
        Vector wta = w.transpose() * ak;
        ga.col(k) -= (r.cwiseProduct(ak) - wb) / ell2;
        gb.col(k) += (wta - c.cwiseProduct(bk)) / ell2;
        // d K_ij / d log ell_k = K_ij (a_ik - b_jk)^2 / ell_k^2
        double s = r.dot(ak.cwiseProduct(ak)) - 2.0 * ak.dot(wb) +
                   c.dot(bk.cwiseProduct(bk));
        gell(k, 0) += s / ell2;
      }
      in_adj(3)(0, 0) += w.sum();
      break;
    }
  }
}

// ---- op constructors --------------------------------------------------------

namespace {

Tape* same_tape(Var a, Var b) {
  check_arg(a.tape == b.tape, "operands recorded on different tapes");
  return a.tape;
}

Node binary(Op op, Var a, Var b, Matrix value) {
  Node n;
  n.op = op;
  n.in[0] = a.idx;
  n.in[1] = b.idx;
  n.value = std::move(value);
  return n;
}

Node unary(Op op, Var a, Matrix value) {
  Node n;
  n.op = op;
  n.in[0] = a.idx;
  n.value = std::move(value);
  return n;
}

void check_same_shape(Var a, Var b, const char* what) {
  check_arg(a.val().rows() == b.val().rows() &&
                a.val().cols() == b.val().cols(),
            std::string(what) + ": shape mismatch");
}

}  // namespace

Var add(Var a, Var b) {
  Tape* t = same_tape(a, b);
  check_same_shape(a, b, "add");
  return t->push(binary(Op::kAdd, a, b, a.val() + b.val()));
}

Var sub(Var a, Var b) {
  Tape* t = same_tape(a, b);
  check_same_shape(a, b, "sub");
  return t->push(binary(Op::kSub, a, b, a.val() - b.val()));
}

Var mul(Var a, Var b) {
  Tape* t = same_tape(a, b);
  check_same_shape(a, b, "mul");
  return t->push(binary(Op::kMul, a, b, a.val().cwiseProduct(b.val())));
}

Var div(Var a, Var b) {
  Tape* t = same_tape(a, b);
  check_same_shape(a, b, "div");
  return t->push(binary(Op::kDiv, a, b, a.val().cwiseQuotient(b.val())));
}

Var smul(Var s, Var m) {
  Tape* t = same_tape(s, m);
  check_arg(s.val().size() == 1, "smul: first operand must be 1x1");
  return t->push(binary(Op::kScalarMul, s, m, s.val()(0, 0) * m.val()));
}

Var sadd(Var s, Var m) {
  Tape* t = same_tape(s, m);
  check_arg(s.val().size() == 1, "sadd: first operand must be 1x1");
  return t->push(
      binary(Op::kScalarAdd, s, m, (m.val().array() + s.val()(0, 0)).matrix()));
}

Var cmul(Var a, double c) {
  Node n = unary(Op::kMulConst, a, c * a.val());
  n.cdata = c;
  return a.tape->push(std::move(n));
}

Var cadd(Var a, double c) {
  Node n = unary(Op::kAddConst, a, (a.val().array() + c).matrix());
  n.cdata = c;
  return a.tape->push(std::move(n));
}

Var matmul(Var a, Var b) {
  Tape* t = same_tape(a, b);
  check_arg(a.val().cols() == b.val().rows(), "matmul: inner dim mismatch");
  return t->push(binary(Op::kMatMul, a, b, a.val() * b.val()));
}

Var transpose(Var a) {
  return a.tape->push(unary(Op::kTranspose, a, a.val().transpose()));
}

Var sum_all(Var a) {
  return a.tape->push(
      unary(Op::kSumAll, a, Matrix::Constant(1, 1, a.val().sum())));
}

Var trace(Var a) {
  check_arg(a.val().rows() == a.val().cols(), "trace: matrix not square");
  return a.tape->push(
      unary(Op::kTrace, a, Matrix::Constant(1, 1, a.val().trace())));
}

Var block(Var a, int i0, int j0, int rows, int cols) {
  check_arg(i0 >= 0 && j0 >= 0 && i0 + rows <= a.val().rows() &&
                j0 + cols <= a.val().cols(),
            "block: out of range");
  Node n = unary(Op::kBlock, a, a.val().block(i0, j0, rows, cols));
  n.i0 = i0;
  n.j0 = j0;
  n.br = rows;
  n.bc = cols;
  return a.tape->push(std::move(n));
}

Var concat_v(Var a, Var b) {
  Tape* t = same_tape(a, b);
  check_arg(a.val().cols() == b.val().cols(), "concat_v: column mismatch");
  Matrix v(a.val().rows() + b.val().rows(), a.val().cols());
  v << a.val(), b.val();
  return t->push(binary(Op::kConcatV, a, b, std::move(v)));
}

Var exp(Var a) {
  return a.tape->push(unary(Op::kExp, a, a.val().array().exp().matrix()));
}

Var log(Var a) {
  return a.tape->push(unary(Op::kLog, a, a.val().array().log().matrix()));
}

Var tanh(Var a) {
  return a.tape->push(unary(Op::kTanh, a, a.val().array().tanh().matrix()));
}

Var sinh(Var a) {
  return a.tape->push(unary(Op::kSinh, a, a.val().array().sinh().matrix()));
}

Var asinh(Var a) {
  return a.tape->push(unary(
      Op::kAsinh, a,
      a.val().unaryExpr([](double x) { return std::asinh(x); })));
}

Var softplus(Var a) {
  return a.tape->push(unary(
      Op::kSoftplus, a,
      a.val().unaryExpr([](double x) { return softplus_stable(x); })));
}

Var sqrt(Var a) {
  return a.tape->push(unary(Op::kSqrt, a, a.val().array().sqrt().matrix()));
}

Var square(Var a) {
  return a.tape->push(unary(Op::kSquare, a, a.val().array().square().matrix()));
}

Var abs(Var a) {
  return a.tape->push(unary(Op::kAbs, a, a.val().array().abs().matrix()));
}

Var sign(Var a) {
  return a.tape->push(unary(
      Op::kSign, a,
      a.val().unaryExpr([](double x) { return x < 0.0 ? -1.0 : 1.0; })));
}

Var cholesky(Var a, std::string label) {
  check_arg(a.val().rows() == a.val().cols(), "cholesky: matrix not square");
  Eigen::LLT<Matrix> llt(a.val());
  if (llt.info() != Eigen::Success) {
    throw CholeskyError("cholesky: matrix not positive definite" +
                        (label.empty() ? std::string()
                                       : " at node '" + label + "'"));
  }
  Node n = unary(Op::kCholesky, a, llt.matrixL());
  n.label = std::move(label);
  return a.tape->push(std::move(n));
}

Var solve_tril(Var l, Var b) {
  Tape* t = same_tape(l, b);
  check_arg(l.val().rows() == b.val().rows(), "solve_tril: dim mismatch");
  return t->push(binary(
      Op::kSolveTriL, l, b,
      l.val().triangularView<Eigen::Lower>().solve(b.val())));
}

Var solve_trilt(Var l, Var b) {
  Tape* t = same_tape(l, b);
  check_arg(l.val().rows() == b.val().rows(), "solve_trilt: dim mismatch");
  return t->push(binary(
      Op::kSolveTriLT, l, b,
      l.val().transpose().triangularView<Eigen::Upper>().solve(b.val())));
}

Var diagv(Var a) {
  check_arg(a.val().rows() == a.val().cols(), "diagv: matrix not square");
  return a.tape->push(unary(Op::kDiagv, a, a.val().diagonal()));
}

Var tril_softplus_diag(Var a) {
  check_arg(a.val().rows() == a.val().cols(),
            "tril_softplus_diag: matrix not square");
  Matrix v = a.val().triangularView<Eigen::StrictlyLower>();
  for (int k = 0; k < v.rows(); ++k) v(k, k) = softplus_stable(a.val()(k, k));
  return a.tape->push(unary(Op::kTrilSoftplusDiag, a, std::move(v)));
}

Var se_kernel(Var a, Var b, Var log_ell, Var log_sf2) {
  Tape* t = same_tape(a, b);
  same_tape(a, log_ell);
  same_tape(a, log_sf2);
  const Matrix& av = a.val();
  const Matrix& bv = b.val();
  const int d = static_cast<int>(av.cols());
  check_arg(bv.cols() == d, "se_kernel: input dim mismatch");
  check_arg(log_ell.val().rows() == d && log_ell.val().cols() == 1,
            "se_kernel: log_ell must be d x 1");
  check_arg(log_sf2.val().size() == 1, "se_kernel: log_sf2 must be 1x1");

  Vector inv_ell = (-log_ell.val().col(0).array()).exp();
  Matrix as = av * inv_ell.asDiagonal();
  Matrix bs = bv * inv_ell.asDiagonal();
  Vector an = as.rowwise().squaredNorm();
  Vector bn = bs.rowwise().squaredNorm();
  Matrix d2 = (-2.0 * as * bs.transpose());
  d2.colwise() += an;
  d2.rowwise() += bn.transpose();
  d2 = d2.cwiseMax(0.0);
  double sf2 = std::exp(log_sf2.val()(0, 0));
  Matrix k = sf2 * (-0.5 * d2.array()).exp();

  Node n;
  n.op = Op::kSeKernel;
  n.in[0] = a.idx;
  n.in[1] = b.idx;
  n.in[2] = log_ell.idx;
  n.in[3] = log_sf2.idx;
  n.value = std::move(k);
  return t->push(std::move(n));
}

Var gaussian_logpdf_diag(Var x, Var mean, Var log_var) {
  Var r = sub(x, mean);
  Var quad = sum_all(div(square(r), exp(log_var)));
  Var logdet = sum_all(log_var);
  double c = static_cast<double>(x.val().size()) * std::log(2.0 * M_PI);
  return cmul(cadd(add(quad, logdet), c), -0.5);
}

// ---- named-parameter evaluation ---------------------------------------------

GradResult evaluate_with_gradients(
    const ParamStore& params,
    const std::function<Var(Tape&, const VarMap&)>& build) {
  Tape tape;
  VarMap vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    vars.emplace(params.name(static_cast<int>(i)),
                 tape.leaf(params.value(static_cast<int>(i)),
                           params.name(static_cast<int>(i))));
  }
  Var out = build(tape, vars);
  GradResult res;
  res.value = tape.scalar(out);
  tape.backward(out);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(static_cast<int>(i));
    res.grads.emplace(name, tape.grad(vars.at(name)));
  }
  return res;
}

}  // namespace tgpssm::ad
