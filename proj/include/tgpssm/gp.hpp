#pragma once

#include <string>
#include <vector>

#include "tgpssm/autodiff.hpp"
#include "tgpssm/common.hpp"
#include "tgpssm/gaussian.hpp"
#include "tgpssm/param_store.hpp"

namespace tgpssm {

// Squared-exponential kernel with one length scale per input dimension.
// Hyperparameters are stored as logs.
struct SeKernel {
  Vector log_ell;   // input_dim
  double log_sf2 = 0.0;

  static SeKernel isotropic(int input_dim, double ell = 1.0,
                            double sf2 = 1.0);

  double sf2() const { return std::exp(log_sf2); }

  // k(a, b) = sf2 * exp(-sum_k (a_k-b_k)^2 / (2 ell_k^2))
  double operator()(const Vector& a, const Vector& b) const;

  // Gram matrix between row-stacked input sets (n x d vs p x d).
  Matrix matrix(const Matrix& a, const Matrix& b) const;
};

inline Matrix kernel_matrix(const SeKernel& k, const Matrix& a,
                            const Matrix& b) {
  return k.matrix(a, b);
}

// Exact GP posterior at test inputs given (possibly empty) training pairs.
// `noise_var` may be zero; `jitter` is added to the training gram before the
// Cholesky factorization (pass 0 to disable).
GaussianDist gp_conditional(const SeKernel& kernel, const Matrix& train_x,
                            const Vector& train_f, double noise_var,
                            const Matrix& test_x, double jitter = kJitter);

// Sparse variational GP over d_x outputs sharing one set of inducing
// locations. Per output d: kernel, variational mean m_d, and unconstrained
// Cholesky parameter whose effective factor is lower-triangular with
// softplus diagonal.
struct SparseGP {
  Matrix z;                       // M x input_dim
  std::vector<SeKernel> kernels;  // d_x entries
  std::vector<Vector> m;          // d_x entries of length M
  std::vector<Matrix> l_raw;      // d_x entries, M x M unconstrained

  int num_inducing() const { return static_cast<int>(z.rows()); }
  int input_dim() const { return static_cast<int>(z.cols()); }
  int output_dim() const { return static_cast<int>(kernels.size()); }

  // Effective Cholesky factor of S_d.
  Matrix effective_l(int d) const;

  static Matrix to_l_raw(const Matrix& l);  // inverse of effective_l

  // Random but valid instance, for tests.
  static SparseGP random(int output_dim, int input_dim, int num_inducing,
                         Rng& rng);
};

// Marginal q(f) at a single input, integrating the inducing values out of
// q(f, U) = p(f | U) q(U). Outputs are independent across dimensions; the
// covariance of the returned distribution is diagonal.
GaussianDist marginal_q_ft(const SparseGP& gp, const Vector& x_prev);

// KL[ q(U) || p(U) ] summed over output dimensions.
double kl_q_u(const SparseGP& gp);

// ---- tape builders ----------------------------------------------------------

// Per-output-dimension tape handles for the sparse GP quantities shared by
// every time step of an ELBO evaluation.
struct SparseGpVars {
  ad::Var z;
  std::vector<ad::Var> log_ell;
  std::vector<ad::Var> log_sf2;
  std::vector<ad::Var> m;
  std::vector<ad::Var> l;        // effective Cholesky factor of S_d
  std::vector<ad::Var> kzz_chol; // chol(K_zz + jitter I)
};

// Parameter names used in a ParamStore for a SparseGP.
std::string gp_param_name(const std::string& field, int d);

void register_sparse_gp(ad::ParamStore& store, const SparseGP& gp,
                        bool train_z = true);
void read_back_sparse_gp(const ad::ParamStore& store, SparseGP& gp);

SparseGpVars build_sparse_gp_vars(ad::Tape& tape, const ad::VarMap& vars,
                                  int output_dim);

// Mean and variance handles of marginal q(f_d) at a 1 x input_dim point.
struct MarginalQf {
  ad::Var mean;  // 1x1
  ad::Var var;   // 1x1
};

MarginalQf marginal_q_ft_tape(ad::Tape& tape, const SparseGpVars& gp, int d,
                              ad::Var x_row);

// KL[q(U) || p(U)] as a tape scalar.
ad::Var kl_q_u_tape(ad::Tape& tape, const SparseGpVars& gp);

}  // namespace tgpssm
