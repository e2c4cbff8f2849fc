#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgpssm/common.hpp"

namespace tgpssm::ad {

// Reverse-mode automatic differentiation over matrix-valued expressions.
// A Tape records primitive operations eagerly (forward values are computed
// as nodes are pushed); backward() runs one reverse sweep and accumulates
// adjoints. Scalars are 1x1 matrices. Backward computations are plain Eigen
// (no higher-order derivatives).

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,        // elementwise
  kDiv,        // elementwise
  kScalarMul,  // (1x1) * matrix, broadcast
  kScalarAdd,  // (1x1) + matrix, broadcast
  kMulConst,   // matrix * double
  kAddConst,   // matrix + double (elementwise)
  kMatMul,
  kTranspose,
  kSumAll,  // -> 1x1
  kTrace,   // -> 1x1
  kBlock,
  kConcatV,  // stack two matrices vertically
  kExp,
  kLog,
  kTanh,
  kSinh,
  kAsinh,
  kSoftplus,
  kSqrt,
  kSquare,
  kAbs,
  kSign,  // derivative treated as 0
  kCholesky,
  kSolveTriL,   // L^-1 B, L lower triangular
  kSolveTriLT,  // L^-T B
  kDiagv,       // extract diagonal as column vector
  kTrilSoftplusDiag,
  kSeKernel,  // (A, B, log_ell, log_sf2)
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Matrix& val() const;
  double scalar() const;
  int rows() const;
  int cols() const;
};

struct Node {
  Matrix value;
  Matrix adjoint;  // allocated lazily during backward
  int in[4] = {-1, -1, -1, -1};
  double cdata = 0.0;
  int i0 = 0, j0 = 0, br = 0, bc = 0;  // block coordinates
  Op op = Op::kConstant;
  bool touched = false;
  std::string label;
};

class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {
    nodes_.reserve(1024);
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(const Matrix& v, std::string label = {});
  Var leaf(double s, std::string label = {});

  // Non-differentiable input.
  Var constant(const Matrix& v);
  Var constant(double s);

  const Matrix& val(Var v) const { return nodes_[v.idx].value; }
  double scalar(Var v) const;

  // Reverse sweep seeded at a 1x1 node. May be called repeatedly with
  // different seeds; adjoints are reset on each call.
  void backward(Var f);

  // Adjoint of a node after backward(); zero matrix if the node was not
  // reached.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  Var push(Node&& n);

 private:
  void backward_node(int i);
  Matrix& adj(int i);

  std::vector<Node> nodes_;
  bool check_finite_;
};

// ---- primitive operations -------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var div(Var a, Var b);  // elementwise
Var smul(Var s, Var m); // broadcast 1x1 scalar times matrix
Var sadd(Var s, Var m);
Var cmul(Var a, double c);
Var cadd(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var sum_all(Var a);
Var trace(Var a);
Var block(Var a, int i0, int j0, int rows, int cols);
Var concat_v(Var a, Var b);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sinh(Var a);
Var asinh(Var a);
Var softplus(Var a);
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);
Var sign(Var a);
Var cholesky(Var a, std::string label = {});
Var solve_tril(Var l, Var b);   // L^-1 B
Var solve_trilt(Var l, Var b);  // L^-T B
Var diagv(Var a);
Var tril_softplus_diag(Var a);
Var se_kernel(Var a, Var b, Var log_ell, Var log_sf2);

// ---- composite helpers ----------------------------------------------------

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return cmul(a, c); }
inline Var operator*(Var a, double c) { return cmul(a, c); }
inline Var operator+(Var a, double c) { return cadd(a, c); }
inline Var operator+(double c, Var a) { return cadd(a, c); }
inline Var operator-(Var a, double c) { return cadd(a, -c); }
inline Var operator-(double c, Var a) { return cadd(cmul(a, -1.0), c); }
inline Var operator-(Var a) { return cmul(a, -1.0); }

// <a, b> for equal-shaped matrices.
inline Var dot(Var a, Var b) { return sum_all(mul(a, b)); }
// Squared Frobenius norm.
inline Var squared_norm(Var a) { return sum_all(square(a)); }
// log |A| for symmetric positive definite A, through its Cholesky factor.
inline Var log_det_from_chol(Var l) {
  return cmul(sum_all(log(diagv(l))), 2.0);
}

// sum_i [ -0.5 log(2 pi) - 0.5 log_var_i - 0.5 (x_i - mean_i)^2 / var_i ]
// for a diagonal Gaussian; x, mean, log_var are column vectors.
Var gaussian_logpdf_diag(Var x, Var mean, Var log_var);

// ---- named-parameter evaluation --------------------------------------------

using VarMap = std::unordered_map<std::string, Var>;

struct GradResult {
  double value = 0.0;
  std::unordered_map<std::string, Matrix> grads;
};

class ParamStore;  // defined in param_store.hpp

// Registers every parameter in `params` as a leaf (in insertion order),
// invokes `build` to produce a scalar output, and runs one backward pass.
GradResult evaluate_with_gradients(
    const ParamStore& params,
    const std::function<Var(Tape&, const VarMap&)>& build);

}  // namespace tgpssm::ad
